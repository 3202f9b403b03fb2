"""Prototypical-network activity embedder (q1).

The embedding ``u`` feeds the advisory layer; the episodic loss trains it
to cluster clips by activity. Episodes are carved out of the training batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, ops


def embed(params: dict[str, Tensor], L: Tensor) -> Tensor:
    """Two fully connected layers with a rectifier between: ``L -> u``."""
    w1 = params["q1.fc1.weight"]
    if L.shape[-1] != w1.shape[0]:
        raise DimensionError(f"embed expects width {w1.shape[0]}, got {L.shape[-1]}")
    hidden = ops.relu(ops.linear(L, w1, params["q1.fc1.bias"]))
    return ops.linear(hidden, params["q1.fc2.weight"], params["q1.fc2.bias"])


@dataclass
class Episode:
    support: list[int]  # row indices into the batch embedding matrix
    query: list[int]
    labels: np.ndarray  # activity label per batch row
    classes: list[int]  # classes with at least one support row, sorted

    @property
    def K(self) -> int:
        return len(self.classes)


def make_episode(labels, min_query_classes: int = 1) -> Episode | None:
    """Split batch rows per class: first ceil(n/2) to support, the rest to query.

    Singleton classes stay support-only. Returns ``None`` when no query row exists.
    """
    labels = np.asarray(labels)
    support, query = [], []
    for c in sorted(set(labels.tolist())):
        rows = np.flatnonzero(labels == c).tolist()
        k = (len(rows) + 1) // 2
        support += rows[:k]
        query += rows[k:]
    classes = sorted(set(labels[support].tolist()))
    if not query or len({int(labels[q]) for q in query}) < min_query_classes:
        return None
    return Episode(support, query, labels, classes)


def compute_prototypes(u: Tensor, episode: Episode) -> Tensor:
    """Class centroids of the support embeddings, ``[K, E]`` in ``episode.classes`` order."""
    labels = episode.labels
    avg = np.zeros((episode.K, u.shape[0]), dtype=u.dtype)
    for k, c in enumerate(episode.classes):
        rows = [r for r in episode.support if labels[r] == c]
        if not rows:
            raise ValueError(f"class {c} has no support rows")
        avg[k, rows] = 1.0 / len(rows)
    return _avg(avg, u)


def _avg(avg: np.ndarray, u: Tensor) -> Tensor:
    # avg @ u with avg constant: (u^T @ avg^T)^T keeps the tracked operand on the left
    ut = ops.transpose(u, (1, 0))  # [E, N]
    return ops.transpose(ops.matmul(ut, Tensor(avg.T.copy())), (1, 0))


def squared_distances(q: Tensor, protos: Tensor) -> Tensor:
    if q.shape[-1] != protos.shape[-1]:
        raise DimensionError(f"embedding width mismatch: {q.shape} vs prototypes {protos.shape}")
    diff = ops.sub(ops.reshape(q, (q.shape[0], 1, q.shape[1])), ops.reshape(protos, (1, *protos.shape)))
    return ops.sum(ops.mul(diff, diff), axis=-1)


def classify_activity(u: Tensor, protos: Tensor) -> Tensor:
    """Softmax over negative squared Euclidean distances, ``[N, K]``."""
    if protos.shape[0] < 1:
        raise ValueError("need at least one prototype")
    single = len(u.shape) == 1
    if single:
        u = ops.reshape(u, (1, u.shape[0]))
    p = ops.softmax(ops.mul(squared_distances(u, protos), Tensor(np.asarray(-1.0, dtype=u.dtype))))
    return ops.reshape(p, (p.shape[1],)) if single else p


def proto_loss(u: Tensor, episode: Episode) -> tuple[Tensor, float]:
    """Mean query cross-entropy and query accuracy for one episode."""
    protos = compute_prototypes(u, episode)
    q = ops.getitem(u, np.array(episode.query))
    probs = classify_activity(q, protos)
    index = {c: k for k, c in enumerate(episode.classes)}
    target = np.zeros(probs.shape, dtype=u.dtype)
    truth = np.array([index[int(episode.labels[r])] for r in episode.query])
    target[np.arange(len(truth)), truth] = 1.0
    loss = ops.mean(ops.cross_entropy(Tensor(target), probs))
    acc = float(np.mean(probs.data.argmax(axis=1) == truth))
    return loss, acc


def nearest_prototype(u: np.ndarray, protos: np.ndarray) -> np.ndarray:
    d = ((u[:, None, :] - protos[None, :, :]) ** 2).sum(-1)
    return d.argmin(axis=1)
