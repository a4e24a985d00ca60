# The interchange file formats: binary feature/match containers, their
# JSON mirrors, and a round trip through the command-line `convert`.

import json
import tempfile
from pathlib import Path

import numpy as np

import matchbench as mb
from matchbench.cli import main as matchbench_cli
from matchbench.features import ScoredMatchFile, load_features, save_features, save_scored_matches

work = Path(tempfile.mkdtemp(prefix="matchbench_demo_"))
print(f"Working in {work}")

print("\nExtract features from a synthetic texture and save them:")
img = mb.random_block_texture(192, 192, seed=5)
fs = mb.extract(img, image_id="demo_1")
feat_path = work / "demo_1.feat"
save_features(fs, feat_path)
print(f"  {len(fs)} keypoints, {fs.descriptors.dim}-bit descriptors")
print(f"  {feat_path.name}: {feat_path.stat().st_size} bytes")

print("\nReload and verify the round trip is exact:")
back = load_features(feat_path)
print("  loaded == saved:", back == fs)

print("\nConvert to the JSON mirror via the CLI and peek inside:")
json_path = work / "demo_1.json"
matchbench_cli(["convert", str(feat_path), str(json_path)])
doc = json.loads(json_path.read_text())
print("  top-level keys:", sorted(doc))
print("  first keypoint:", doc["keypoints"][0])

print("\nConvert back to binary; bytes are identical:")
back_path = work / "roundtrip.feat"
matchbench_cli(["convert", str(json_path), str(back_path)])
print("  identical:", back_path.read_bytes() == feat_path.read_bytes())

print("\nScored-match files carry coordinate pairs plus confidences:")
entries = np.array(
    [[10.0, 12.0, 11.5, 12.2, 0.95], [50.0, 40.0, 48.7, 41.0, 0.60]], np.float32
)
m = ScoredMatchFile("demo_1", "demo_2", entries)
match_path = work / "demo_pair.match"
save_scored_matches(m, match_path)
print(f"  {match_path.name}: {match_path.stat().st_size} bytes, {len(m)} entries")
matchbench_cli(["convert", str(match_path), str(work / "demo_pair.json")])
print("  JSON mirror:", (work / "demo_pair.json").read_text().splitlines()[1].strip(), "...")
