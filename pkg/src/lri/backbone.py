"""Distance-scalar message passing backbone for point-cloud classification.

The encoder consumes per-point features plus edge geometry (length and unit
displacement), so the classifier sees coordinates only through invariant or
equivariant quantities. Existence masks and soft edge weights enter as
multiplicative factors on messages, which keeps every interpretation
mechanism differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .exceptions import ValidationError
from .graph import edge_geometry

AGGREGATIONS = ("mean", "sum")


@dataclass
class TensorBatch:
    """Flat tensors for a batch of point clouds (nodes concatenated)."""

    x: torch.Tensor          # [N, F] node features
    r: torch.Tensor          # [N, D] centered (rescaled) coordinates
    ptr: torch.Tensor        # [B + 1] cloud offsets
    y: torch.Tensor          # [B] binary labels (float)
    src: torch.Tensor        # [E] hard-graph message sources
    dst: torch.Tensor        # [E] hard-graph message targets

    @property
    def n_clouds(self):
        return self.ptr.shape[0] - 1

    @property
    def lengths(self):
        return self.ptr[1:] - self.ptr[:-1]

    def segment_ids(self):
        return torch.repeat_interleave(
            torch.arange(self.n_clouds, device=self.ptr.device), self.lengths)


class MessagePassingEncoder(nn.Module):
    """Stack of message passing layers producing per-point embeddings.

    Messages are MLP([z_u, |r_v - r_u|, (r_v - r_u)/|.|]) scaled by the edge
    weight and the source point's existence mask, then mean-aggregated over
    incoming edges (count denominator, so down-weighting a neighbor actually
    shrinks its contribution instead of renormalizing it away).
    """

    def __init__(self, in_features, dim, hidden=64, layers=4, dropout=0.2,
                 aggregation="mean"):
        super().__init__()
        if aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation must be one of {AGGREGATIONS}")
        if layers < 1:
            raise ValidationError("need at least one message passing layer")
        self.aggregation = aggregation
        self.hidden = hidden
        self.embed = nn.Linear(in_features, hidden)
        edge_in = hidden + 1 + dim
        self.msg = nn.ModuleList()
        self.upd = nn.ModuleList()
        self.norms = nn.ModuleList()
        for _ in range(layers):
            self.msg.append(nn.Sequential(
                nn.Linear(edge_in, hidden), nn.ReLU(), nn.Linear(hidden, hidden)))
            self.upd.append(nn.Linear(2 * hidden, hidden))
            self.norms.append(nn.BatchNorm1d(hidden))
        self.act = nn.ReLU()
        self.drop = nn.Dropout(dropout)

    def forward(self, x, coords, src, dst, edge_weight=None, node_mask=None):
        n = x.shape[0]
        z = self.embed(x)
        if src.numel():
            dist, unit = edge_geometry(coords, src, dst)
            geo = torch.cat([dist.unsqueeze(1), unit], dim=1)
            scale = None
            if edge_weight is not None:
                scale = edge_weight
            if node_mask is not None:
                scale = node_mask[src] if scale is None else scale * node_mask[src]
            counts = torch.zeros(n, dtype=z.dtype, device=z.device)
            counts.index_add_(0, dst, torch.ones_like(dist))
            counts = counts.clamp_min(1.0).unsqueeze(1)
        for i in range(len(self.msg)):
            if src.numel():
                m = self.msg[i](torch.cat([z[src], geo], dim=1))
                if scale is not None:
                    m = m * scale.unsqueeze(1)
                agg = torch.zeros_like(z)
                agg.index_add_(0, dst, m)
                if self.aggregation == "mean":
                    agg = agg / counts
            else:
                agg = torch.zeros_like(z)
            z = self.upd[i](torch.cat([z, agg], dim=1))
            if n > 1 or not self.training:
                z = self.norms[i](z)
            z = self.drop(self.act(z))
        return z


def pool_sum(z, batch: TensorBatch, node_mask=None, mask_pooling=True):
    """Sum-pool per-point embeddings into per-cloud vectors.

    With ``mask_pooling`` a point's mask removes it from the readout as well
    as from messages (full-removal semantics); otherwise masks act on
    messages only.
    """
    if node_mask is not None and mask_pooling:
        z = z * node_mask.unsqueeze(1)
    out = torch.zeros(batch.n_clouds, z.shape[1], dtype=z.dtype, device=z.device)
    out.index_add_(0, batch.segment_ids(), z)
    return out


class ClassifierHead(nn.Module):
    def __init__(self, hidden=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, pooled):
        return self.net(pooled).squeeze(-1)


class PointCloudNet(nn.Module):
    """Encoder + readout + binary classifier head."""

    def __init__(self, in_features, dim, hidden=64, layers=4, dropout=0.2,
                 aggregation="mean", mask_pooling=True):
        super().__init__()
        self.encoder = MessagePassingEncoder(in_features, dim, hidden=hidden,
                                             layers=layers, dropout=dropout,
                                             aggregation=aggregation)
        self.head = ClassifierHead(hidden)
        self.mask_pooling = mask_pooling

    def node_embeddings(self, batch: TensorBatch, coords=None,
                        edges=None, edge_weight=None, node_mask=None):
        coords = batch.r if coords is None else coords
        src, dst = edges if edges is not None else (batch.src, batch.dst)
        return self.encoder(batch.x, coords, src, dst,
                            edge_weight=edge_weight, node_mask=node_mask)

    def forward(self, batch: TensorBatch, coords=None, edges=None,
                edge_weight=None, node_mask=None):
        z = self.node_embeddings(batch, coords=coords, edges=edges,
                                 edge_weight=edge_weight, node_mask=node_mask)
        pooled = pool_sum(z, batch, node_mask=node_mask,
                          mask_pooling=self.mask_pooling)
        return self.head(pooled)


def classification_loss(logits, y):
    return nn.functional.binary_cross_entropy_with_logits(logits, y)


@torch.no_grad()
def predict_proba(net, batch: TensorBatch, **kw):
    net.eval()
    return torch.sigmoid(net(batch, **kw))
