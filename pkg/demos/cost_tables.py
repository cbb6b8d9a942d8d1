"""
Counting mult-adds and parameters
=================================

Cost of the network under the width multiplier, the input resolution,
the shallow variant and the full-convolution baseline. Nothing here
allocates weights: the costs come from the layer plan alone.
"""

from sepconv.model import REFERENCE_MODELS, ModelConfig, count_costs

# the standard network at 224 x 224
report = count_costs(ModelConfig())
print("separable:", report.summary())

# a full 3x3 convolution in place of every depthwise + pointwise pair
print("full conv:", count_costs(ModelConfig(variant="full_conv")).summary())

# the width multiplier thins every layer; compute and parameters both shrink
for alpha in (1.0, 0.75, 0.5, 0.25):
    print(f"alpha {alpha:<5}", count_costs(ModelConfig(alpha=alpha)).summary())

# lower resolution shrinks compute only
for resolution in (224, 192, 160, 128):
    print(f"{resolution}px     ", count_costs(ModelConfig(resolution=resolution)).summary())

# dropping the five 14x14x512 blocks versus making every layer narrower
print("shallow   ", count_costs(ModelConfig(variant="shallow")).summary())

for name, top1, madds, params in REFERENCE_MODELS:
    print(f"{name}: {madds}M mult-adds, {params}M params")

# where the compute goes: the "conv" rows are almost all 1x1 pointwise layers
by_kind = {}
for row in report.rows:
    by_kind[row.kind] = by_kind.get(row.kind, 0) + row.mult_adds
for kind, madds in sorted(by_kind.items(), key=lambda kv: -kv[1]):
    print(f"{kind:<10} {madds / report.mult_adds:6.1%} of mult-adds")
