"""Pick a single cuboid with the oracle reasoner and show what each stage did."""
from clasp.orchestrator import log_word, run_episode
from clasp.reasoner import Instruction, OracleReasoner
from clasp.scene import ObjectInstance, Pose2, TabletopScene, try_place

scene = try_place(TabletopScene(), ObjectInstance.from_library("cuboid", Pose2(0.3, 0.25, 0.4)))
ep = run_episode(scene, Instruction.parse("pick the cuboid"), OracleReasoner())

print("outcome:", ep.outcome, "after", ep.attempts_used, "attempt(s)")
print("stage word:", log_word(ep.log))
for rec in ep.log:
    print(f"  {rec.stage:<8} attempt {rec.attempt}  {rec.payload}")
print("cuboid now at", tuple(round(float(c), 3) for c in ep.scene_after.find("cuboid").centroid))
