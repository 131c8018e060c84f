# %% Semantic area detection and matching
#
# Walks the area stage on its own: object areas from connected
# components, intersection areas from the coarse-to-fine window search,
# descriptors, and nearest-neighbor matching with doubtful flagging.

from sgam.areas import describe_soa, detect_sia, detect_soa, sam_pipeline
from sgam.config import SgamConfig
from sgam.synth import render_fixture

cfg = SgamConfig()
pair = render_fixture("room6", seed=0)

# %% object areas: one per merged connected component
soas = detect_soa(pair.sem0, cfg)
for a in soas:
    print(f"label {a.anchor_label:>2}  bbox {a.bbox}")

# %% the surrounding descriptor of the first box
space = tuple(sorted(set(pair.sem0.distinct_labels()) | set(pair.sem1.distinct_labels())))
desc = describe_soa(pair.sem0, soas[0], space, cfg)
print("label space:", space)
print("side bits (top/right/bottom/left):")
print(desc.side_bits.astype(int))

# %% intersection areas: windows with more than three labels
sias = detect_sia(pair.sem0, cfg.default_area_size, cfg)
print(f"{len(sias)} intersection areas:", [a.bbox for a in sias])

# %% full matching between the two views
out = sam_pipeline(pair.sem0, pair.sem1, cfg)
for m in out.accepted:
    print(f"{m.kind}  {m.a0.bbox} -> {m.a1.bbox}  distance {m.desc_distance:.3f}")
print(f"doubtful: {len(out.doubtful_a0)} in image 0, {len(out.doubtful_a1)} in image 1")

# %% ambiguity: identical twins end up doubtful, never guessed
twins = render_fixture("twins", seed=0)
out = sam_pipeline(twins.sem0, twins.sem1, cfg)
print(f"twins: accepted={len(out.accepted)} "
      f"doubtful0={len(out.doubtful_a0)} doubtful1={len(out.doubtful_a1)}")
