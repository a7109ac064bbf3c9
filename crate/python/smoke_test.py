#!/usr/bin/env python3
"""Builds the osca_py extension, imports it, and walks the toolkit end to
end: label algebra, synthetic corpora, annotation, training, evaluation,
a noise sweep, and a checkpoint round trip."""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def build_extension(workdir: Path) -> None:
    subprocess.run(["cargo", "build", "--release", "-p", "osca-py"], cwd=ROOT, check=True)
    shutil.copy2(ROOT / "target" / "release" / "libosca_py.so", workdir / "osca_py.so")
    sys.path.insert(0, str(workdir))


def check_labels(osca) -> None:
    assert osca.NUM_CLASSES == 9
    assert osca.classes()[0] == "activate"
    assert osca.classes()[-1] == "no_osc"
    assert len(osca.frame_labels()) == 16

    assert osca.compose("pre_activate", "post_activate") == "activate"
    assert osca.compose("pre_activate", "post_deactivate") == "no_osc"
    assert osca.compose("post_deposit", "pre_remove") == "remove"
    assert osca.inverse("deposit") == "remove"
    assert osca.inverse("deform") is None
    assert osca.same_state("pre_remove", "post_deposit")
    assert not osca.same_state("pre_activate", "post_activate")

    try:
        osca.compose("pre_activate", "post_bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("a bad label name should raise ValueError")


def check_corpus(osca, workdir: Path):
    corpus = osca.Corpus.generate(
        num_videos=24,
        segments_per_video=(3, 6),
        verbs_per_state=2,
        nouns_per_state=2,
        feature_dim=16,
        steps_per_segment=3,
        feature_informativeness=0.6,
        seed=5,
    )
    assert corpus.num_videos == 24
    assert corpus.feature_dim == 16
    assert corpus.num_verbs == 18 and corpus.num_nouns == 18
    assert len(corpus.video_ids()) == 24

    priors = corpus.class_priors()
    assert len(priors) == 9 and math.isclose(sum(priors), 1.0, abs_tol=1e-9)
    counts = corpus.transition_counts()
    assert len(counts) == 9 and all(len(row) == 9 for row in counts)

    annotations, audit = corpus.annotate()
    rejected = (
        audit["rejected_pnr_order"] + audit["rejected_occlusion"] + audit["rejected_area"]
    )
    assert audit["total"] == audit["annotated"] + rejected
    assert audit["annotated"] > 0
    assert all("video_id" in a and "status" in a for a in annotations)

    corpus.split(0.6, 0.2, 0.2, seed=5)

    saved = workdir / "corpus.jsonl"
    corpus.save(saved)
    reloaded = osca.Corpus.load(saved)
    assert reloaded.num_segments == corpus.num_segments
    assert reloaded.class_priors("train") == corpus.class_priors("train")
    return corpus


def check_model(osca, corpus, workdir: Path) -> None:
    model, history = osca.Model.train(
        corpus,
        streams="vid,action,state",
        hidden_size=8,
        embedding_dim=4,
        window=1,
        batch_size=16,
        learning_rate=1e-3,
        epochs=2,
        seed=5,
    )
    assert model.streams == "vid,action,state"
    assert len(history) == 3, "expected epoch 0 plus two trained epochs"
    assert history[0]["epoch"] == 0
    assert abs(history[0]["train_loss"] - math.log(9)) < 0.1

    report = model.evaluate(corpus, split="test", recognizer="oracle")
    assert report["n_samples"] > 0
    assert 0.0 <= report["top1_macc"] <= 100.0
    assert len(report["per_class"]) == 9

    rows = model.noise_sweep(
        corpus, split="test", levels=[(0.0, 0.0), (0.5, 0.5)], seeds=[0, 1]
    )
    assert len(rows) == 2
    assert rows[0]["top1_mean"] == report["top1_macc"], "zero noise must match the clean run"

    noisy = model.evaluate(corpus, split="test", recognizer="noisy(0.5,0.5,0)")
    assert 0.0 <= noisy["top1_macc"] <= 100.0

    ckpt = workdir / "model.ckpt"
    model.save(ckpt)
    first = osca.Model.load(ckpt, window=1)
    second = osca.Model.load(ckpt, window=1)
    assert first.streams == model.streams
    assert first.seed == model.seed
    report_first = first.evaluate(corpus, split="test", recognizer="oracle")
    report_second = second.evaluate(corpus, split="test", recognizer="oracle")
    assert report_first == report_second, "reloading a checkpoint must be deterministic"


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="osca-py-"))
    build_extension(workdir)
    import osca_py as osca

    check_labels(osca)
    corpus = check_corpus(osca, workdir)
    check_model(osca, corpus, workdir)
    print("smoke test passed")


if __name__ == "__main__":
    main()
