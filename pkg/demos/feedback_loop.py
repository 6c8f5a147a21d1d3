"""A reasoner that aims off-centre, corrected by judger feedback between attempts."""
from clasp.orchestrator import PipelineConfig, run_episode
from clasp.reasoner import Instruction, PerturbedReasoner
from clasp.scene import ObjectInstance, Pose2, TabletopScene, try_place

scene = try_place(TabletopScene(), ObjectInstance.from_library("ball", Pose2(0.3, 0.25)))
instr = Instruction.for_label("ball")

for name in ("prj", "prhj"):
    cfg = PipelineConfig.ablation(name, seed=8)
    ep = run_episode(scene, instr, PerturbedReasoner(0.9, 8), cfg)
    print(f"[{name}] {ep.outcome} in {ep.attempts_used} attempt(s)")
    for a in ep.attempts:
        if a.action is not None:
            print(f"    aimed at ({a.action.u:.1f}, {a.action.v:.1f})")
    for e in ep.memory.entries:
        print("    feedback:", e.text)
