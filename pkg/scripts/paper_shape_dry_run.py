"""Print every tensor shape of the full-size profile (112x112x7 input, 256-wide recurrent state) without training."""

from afn.config import paper_shape_config
from afn.model import shape_dry_run

if __name__ == "__main__":
    cfg = paper_shape_config()
    shapes = shape_dry_run(cfg.model, sum(cfg.grammar.channel_groups), cfg.grammar.image_size, n_actions=48)
    for block, shape in enumerate(shapes.pop("conv_blocks")):
        print(f"conv block {block + 1:<14} {shape}")
    n_params = shapes.pop("n_params")
    for name, shape in shapes.items():
        print(f"{name:<20} {shape}")
    print(f"{'parameters':<20} {n_params:,}")
