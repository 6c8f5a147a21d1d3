"""Drive an episode through the HTTP reasoner protocol using the bundled stub server."""
from clasp.orchestrator import run_episode
from clasp.reasoner import Instruction, RemoteReasoner, StubServer, fixed_reply
from clasp.scene import ObjectInstance, Pose2, TabletopScene, try_place

scene = try_place(TabletopScene(), ObjectInstance.from_library("lego", Pose2(0.25, 0.3, 1.0)))
instr = Instruction.for_label("lego")

with StubServer() as srv:
    ep = run_episode(scene, instr, RemoteReasoner(srv.url))
    print("centroid stub:", ep.outcome, "-", len(srv.requests), "request(s) served")

with StubServer(fixed_reply("Sure! I would grasp the lego by its left edge.")) as srv:
    ep = run_episode(scene, instr, RemoteReasoner(srv.url))
    print("chatty stub:  ", ep.outcome)
    for rec in ep.log:
        if rec.stage == "reason":
            print("   ", rec.payload)
