"""Few-shot detector assembly: backbone + fusion + RPN + aggregation + head.

All parameters are always constructed, whatever the ablation flags say, so
checkpoints stay layout-compatible across variants; the flags only steer
the forward computation.
"""

from __future__ import annotations

import numpy as np

from . import boxes as B
from . import ops
from .aggregation import ClassPrototype, GLRAggregator, mean_prototype
from .autodiff import Tensor, no_grad
from .backbone import Backbone, PyramidFeatures, pool_support
from .config import Config
from .head import Classifier, Detection, PREHead, Regressor
from .params import Module, ParamSet
from .proposal import ProposalSet, RPNHead, SCSFuse, propose


class FewShotDetector(Module):
    """End-to-end detector conditioned on per-class support chips."""

    def __init__(self, cfg: Config, rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        widths = cfg.backbone.widths
        self.backbone = Backbone(widths, cfg.backbone.norm_mean,
                                 cfg.backbone.norm_std, rng)
        c2, c3, c4 = self.backbone.pyramid_channels
        self.c4 = c4
        self.proto_size = cfg.model.proto_size
        na = len(cfg.anchors.scales) * len(cfg.anchors.ratios)
        self.scs = SCSFuse(c2, c3, c4, rng)
        self.rpn = RPNHead(c4, na, rng)
        self.glr = GLRAggregator(c4, rng)
        self.pre = PREHead(c4, self.proto_size, rng)
        self.regressor = Regressor(c4, self.proto_size,
                                   cfg.head.regress_hidden, rng)
        self.classifier = Classifier(c4, cfg.head.patch_width, rng)

    # -- prototype construction ------------------------------------------------

    def build_prototype(self, chips, class_id: int = 0,
                        keep_trace: bool = False) -> ClassPrototype:
        """chips: (k,3,H,W) array or Tensor of backbone-ready support chips."""
        if not isinstance(chips, Tensor):
            chips = Tensor(np.asarray(chips, dtype=np.float32))
        if chips.ndim != 4 or chips.shape[0] < 1:
            raise ValueError(f"need a (k,3,H,W) chip stack, got {chips.shape}")
        k = chips.shape[0]
        feats = self.backbone.forward(chips)
        g2, g3, g4, deep = pool_support(feats, self.proto_size)
        kernels = (g2.mean(axis=0), g3.mean(axis=0), g4.mean(axis=0))
        trace = None
        if self.cfg.model.use_glr:
            e, trace = self.glr.forward(deep)
        else:
            e = mean_prototype(deep)
        return ClassPrototype(e=e, scs_kernels=kernels, class_id=class_id,
                              k=k, trace=trace if keep_trace else None)

    # -- inference ---------------------------------------------------------------

    def propose_for(self, feats: PyramidFeatures,
                    proto: ClassPrototype) -> ProposalSet:
        p = self.cfg.proposal
        a = self.cfg.anchors
        return propose(feats, proto, self.scs, self.rpn,
                       a.scales, a.ratios, self.proto_size,
                       pre_nms_top=p.pre_nms_top, nms_thresh=p.nms_thresh,
                       post_nms_top=p.post_nms_top, min_size=p.min_size,
                       cross_scale=self.cfg.model.use_scs)

    def detect_with_prototypes(self, image, prototypes,
                               max_dets: int = 100) -> list[Detection]:
        """image: (3,H,W) array in [0,1]; prototypes: list of ClassPrototype.

        Candidates from every class are merged, sorted by score descending,
        and truncated to max_dets. No parameters are written.
        """
        if not prototypes:
            raise ValueError("no prototypes given")
        with no_grad():
            img = image if isinstance(image, Tensor) else Tensor(
                np.asarray(image, dtype=np.float32))
            h, w = img.shape[1], img.shape[2]
            feats = self.backbone.forward(img)
            cand: list[Detection] = []
            for proto in prototypes:
                props = self.propose_for(feats, proto)
                if len(props) == 0:
                    continue
                l = (self.pre.forward_many(props.pooled, proto.e)
                     if self.cfg.model.use_pre else props.pooled)
                deltas = self.regressor.forward(l).data
                final = B.clip_boxes(B.decode_boxes(props.boxes, deltas), h, w)
                if self.cfg.head.rank_by == "objectness":
                    scores = props.objectness
                else:
                    scores = self.classifier.forward(props.pooled, proto.e).data
                ok = ((final[:, 2] - final[:, 0] > 0)
                      & (final[:, 3] - final[:, 1] > 0))
                for i in np.flatnonzero(ok):
                    cand.append(Detection(box=final[i], class_id=proto.class_id,
                                          score=float(scores[i])))
            cand.sort(key=lambda d: -d.score)
            if self.cfg.head.cross_class_nms and cand:
                boxes = np.stack([d.box for d in cand])
                scores = np.array([d.score for d in cand])
                keep = B.nms(boxes, scores, self.cfg.head.cross_class_nms_thresh)
                cand = [cand[i] for i in keep]
            return cand[:max_dets]

    def detect(self, image, support_sets: dict,
               max_dets: int = 100) -> list[Detection]:
        """support_sets: class_id -> (k,3,H,W) chip stack; k >= 1 each."""
        for cid, chips in support_sets.items():
            if np.asarray(chips).shape[0] < 1:
                raise ValueError(f"class {cid}: empty support set")
        with no_grad():
            protos = [self.build_prototype(chips, class_id=cid)
                      for cid, chips in sorted(support_sets.items())]
        return self.detect_with_prototypes(image, protos, max_dets=max_dets)

    # -- training forward ---------------------------------------------------------

    def forward_train(self, episode, rng: np.random.Generator):
        """Run one episode through the differentiable loss path.

        Returns (outputs, targets) for compute_losses. Proposals come from
        sampled anchors and the gt boxes themselves (constants), never the
        decoded RPN output, so gradients reach every parameter group.
        """
        from .losses import match_anchors, sample_head_boxes
        from .proposal import flatten_rpn_outputs

        tcfg = self.cfg.train
        proto1 = self.build_prototype(episode.chips_c1, episode.c1)
        proto2 = self.build_prototype(episode.chips_c2, episode.c2)
        q = self.backbone.forward(Tensor(np.asarray(episode.query_image,
                                                    dtype=np.float32)))
        fused = self.scs.forward(q, proto1.scs_kernels,
                                 cross_scale=self.cfg.model.use_scs)
        obj_logits, deltas = self.rpn.forward_raw(fused)
        obj_flat, deltas_flat = flatten_rpn_outputs(
            obj_logits, deltas, self.rpn.anchors_per_cell)

        stride = q.strides[2]
        hf, wf = obj_logits.shape[1], obj_logits.shape[2]
        anchors = B.generate_anchors((hf, wf), stride, self.cfg.anchors.scales,
                                     self.cfg.anchors.ratios)
        gt = np.asarray(episode.query_boxes, dtype=np.float64).reshape(-1, 4)
        match = match_anchors(anchors, gt, tcfg.rpn_pos_iou, tcfg.rpn_neg_iou,
                              tcfg.rpn_samples, rng)
        head = sample_head_boxes(anchors, gt, tcfg.head_pos_iou,
                                 tcfg.head_samples, rng)

        pooled = ops.roi_align(q.f4, head.boxes, stride, self.proto_size)
        l = (self.pre.forward_many(pooled, proto1.e)
             if self.cfg.model.use_pre else pooled)
        head_deltas_all = self.regressor.forward(l)
        pos_rows = np.flatnonzero(head.pos_mask)

        outputs = {
            "rpn_obj_logits": obj_flat[match.sampled_idx],
            "rpn_deltas": deltas_flat[match.pos_idx],
            "cls_logits_c1": self.classifier.logit(pooled, proto1.e),
            "cls_logits_c2": self.classifier.logit(pooled, proto2.e),
            "head_deltas": head_deltas_all[pos_rows],
        }
        targets = {
            "rpn_obj_targets": match.obj_targets,
            "rpn_delta_targets": match.delta_targets,
            "cls_targets_c1": head.cls_targets,
            "head_delta_targets": head.delta_targets,
        }
        return outputs, targets

    # -- persistence -------------------------------------------------------------

    def params(self, meta: dict | None = None) -> ParamSet:
        return self.param_set(meta=meta)

    def load_params(self, params: ParamSet):
        self.load_param_set(params)
