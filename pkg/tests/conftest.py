import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from pdlab.encoder import EncoderConfig  # noqa: E402
from pdlab.harness import ExperimentConfig  # noqa: E402
from pdlab.synthetic import DataConfig  # noqa: E402


def tiny_config(**over) -> ExperimentConfig:
    """A few-second configuration: one narrow layer, a handful of identities, two epochs."""
    base = dict(
        encoder=EncoderConfig(layers=1, text_width=16, image_width=16, heads=2, joint_dim=8),
        data=DataConfig(source_train_ids=16, source_val_ids=2, source_test_ids=4, source_images_per_id=2,
                        target_train_ids=8, target_val_ids=0, target_test_ids=4, target_images_per_id=2),
        epochs=2, warmup_epochs=1, pretrain_epochs=2, pretrain_warmup_epochs=1,
        batch_size=8, ids_per_batch=4, seeds=(0, 1),
    )
    base.update(over)
    return ExperimentConfig(**base)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
