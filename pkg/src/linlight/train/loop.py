"""Training loop: joint optimization of the physical and neural branches.

Per sample the graph is:

    mean texture T, pose ----> geometry net ----> raw displacement, roughness
    coarse uv maps + displacement ----> refined normals      (differentiable)
    refined normals + roughness + lights ----> shading features
    physical render  = diffuse * T + specular   -> rasterize -> image loss
    neural render    = F_R(T, pose, sg(features)) -> rasterize -> image loss
                        + hinge GAN (lighting-aware critic) + L1 feature reg

The stop-gradient sg(.) detaches the shading features before the lighting
network, so the geometry net learns only from the physical-branch
reconstruction.  A step whose losses go non-finite is aborted (parameters
keep their previous values).
"""

import csv
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import geometry as G
from .. import shading as S
from .. import tensor as T
from ..models import MODES, RelightModel, compose_texture_np
from ..optim import Adam, multistep_lr
from ..tensor import Tensor
from . import losses as L
from .disc import MultiScaleDiscriminator
from .metrics import psnr, ssim


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 2
    lr: float = 1e-4
    lr_disc: float = 1e-4
    seed: int = 0
    mode: str = "linear"
    use_gan: bool = True
    use_l1reg: bool = True
    lambda_img: float = 1.0
    lambda_gan: float = 0.01
    lambda_reg: float = 0.01
    lambda_lc: float = 1.0
    lc_every: int = 1
    log_every: int = 25
    probe_every: int = 200
    checkpoint_every: int = 0      # 0 = final only
    resolution: int = 0            # 0 = take from dataset

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("training budgets must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @staticmethod
    def from_file(path) -> "TrainConfig":
        """Plain-text key=value config; unknown keys are an error."""
        known = {f.name: f.type for f in dc_fields(TrainConfig)}
        kwargs = {}
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            typ = known[key]
            if typ in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            elif typ in ("int", int):
                kwargs[key] = int(value)
            elif typ in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return TrainConfig(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n"
                       for f in dc_fields(TrainConfig))


@dataclass
class Sample:
    """Everything cached for one training frame."""

    identity: str
    tex: np.ndarray          # (3,R,R) mean texture
    pose_vec: np.ndarray     # (pose_dim,)
    lights: S.LightSet
    vis: np.ndarray          # (P,L) over valid texels
    maps: "G.UvGeometryMaps"
    view_dirs: np.ndarray    # (R,R,3)
    rmap: "G.RasterMap"
    gt: np.ndarray           # (3,H,W)
    mask: np.ndarray         # (H,W) bool
    cond_a: np.ndarray       # (3,H,W) phong diffuse, image space
    cond_s: np.ndarray       # (3,H,W) phong specular, image space


class FrameCache:
    """Loads and caches per-frame quantities for a dataset."""

    def __init__(self, ds, resolution: int):
        self.ds = ds
        self.resolution = resolution
        self._geom: Dict[tuple, tuple] = {}
        self._samples: Dict[str, Sample] = {}

    def geometry(self, identity: str, pose_id: int, pose: G.Pose):
        key = (identity, pose_id)
        if key not in self._geom:
            posed = G.skin(self.ds.rig, pose)
            maps = G.unwrap(self.ds.rig, posed, self.resolution)
            occ = G.MeshOccluder(posed, self.ds.rig.faces)
            self._geom[key] = (posed, maps, occ)
        return self._geom[key]

    def sample(self, row: dict) -> Sample:
        key = row["identity"] + "/" + row["frame"]
        if key in self._samples:
            return self._samples[key]
        ds = self.ds
        image, lights, pose, cam = ds.load_frame(row)
        posed, maps, occ = self.geometry(row["identity"], int(row["pose_id"]), pose)
        pts = maps.position[maps.valid]
        nrm = maps.normal[maps.valid]
        vis = occ.visibility_matrix(pts, nrm, lights.directions)
        rmap = G.rasterize_geometry(posed, ds.rig.faces, ds.rig.uv, cam,
                                    self.resolution)
        vdirs = S.view_dir_map(maps, cam)
        a_pts, s_pts = S.phong_points(nrm, vdirs[maps.valid], lights,
                                      vis.astype(np.float64))
        r = self.resolution
        a_map = np.zeros((r, r, 3), np.float32)
        s_map = np.zeros((r, r, 3), np.float32)
        a_map[maps.valid] = a_pts
        s_map[maps.valid] = s_pts
        cond_a = G.sample_texture_np(rmap, np.ascontiguousarray(a_map.transpose(2, 0, 1)))
        cond_s = G.sample_texture_np(rmap, np.ascontiguousarray(s_map.transpose(2, 0, 1)))
        tex = np.ascontiguousarray(
            ds.mean_texture(row["identity"]).transpose(2, 0, 1))
        smp = Sample(row["identity"], tex, pose.flat(), lights,
                     vis.astype(np.float32), maps, vdirs, rmap,
                     np.ascontiguousarray(image.transpose(2, 0, 1)),
                     rmap.coverage.copy(), cond_a, cond_s)
        self._samples[key] = smp
        return smp


def forward_sample(model: RelightModel, smp: Sample, build_physical: bool = True):
    """Run both branches on the graph; returns dict of live tensors."""
    tex_t = Tensor(smp.tex)
    pose_t = Tensor(smp.pose_vec)
    raw_disp, beta = model.geometry_forward(tex_t, pose_t)
    xhat, nrm = G.refined_normals_t(smp.maps, raw_disp)
    cd, cs = S.features_t(nrm, beta, smp.maps, smp.lights, smp.view_dirs, smp.vis)
    out = {}
    if build_physical:
        phys_tex = T.add(T.mul(cd, tex_t), cs)
        out["phys_img"] = G.sample_texture(smp.rmap, phys_tex)
    feats = T.concat([cd, cs], axis=0).detach()       # sg(.): stop-gradient
    lighting = model.lighting_input(feats, smp.lights)
    neural_tex, gain, bias, enc_feats = model.neural_texture(tex_t, pose_t, lighting)
    out.update(neural_img=G.sample_texture(smp.rmap, neural_tex),
               enc_feats=enc_feats, features=feats, raw_disp=raw_disp,
               beta=beta, gain=gain, bias=bias)
    return out


def render_inference(model: RelightModel, ds, identity: str, pose: G.Pose,
                     cam: G.Camera, lights: S.LightSet, cache: FrameCache = None,
                     pose_id: Optional[int] = None):
    """Fast inference path: numpy features + no-grad network forward.

    Returns (neural image (H,W,3), physical image (H,W,3), mask).
    """
    r = cache.resolution if cache else int(ds.meta["resolution"])
    if cache is not None and pose_id is not None:
        posed, maps, occ = cache.geometry(identity, pose_id, pose)
    else:
        posed = G.skin(ds.rig, pose)
        maps = G.unwrap(ds.rig, posed, r)
        occ = G.MeshOccluder(posed, ds.rig.faces)
    tex = np.ascontiguousarray(ds.mean_texture(identity).transpose(2, 0, 1))
    pts = maps.position[maps.valid]
    nrm = maps.normal[maps.valid]
    vis = occ.visibility_matrix(pts, nrm, lights.directions)
    return render_from_parts(model, ds.rig, posed, maps, tex, pose, cam,
                             lights, vis)


def render_from_parts(model: RelightModel, rig, posed, maps, tex: np.ndarray,
                      pose: G.Pose, cam: G.Camera, lights: S.LightSet,
                      vis: np.ndarray):
    with T.no_grad():
        tex_t = Tensor(tex)
        pose_t = Tensor(pose.flat())
        raw_disp, beta_t = model.geometry_forward(tex_t, pose_t)
        refined = G.apply_displacement(maps, raw_disp.data[0])
        beta_map = beta_t.data[0]
        feats = S.feature_maps(refined, beta_map, lights, cam,
                               vis.astype(np.float64))
        feats6 = np.concatenate([feats.diffuse, feats.specular], axis=2)
        lighting = model.lighting_input(
            Tensor(np.ascontiguousarray(feats6.transpose(2, 0, 1))), lights)
        neural_tex, _, _, _ = model.neural_texture(tex_t, pose_t, lighting)
    phys_tex = S.compose_pbr(feats.diffuse, feats.specular,
                             tex.transpose(1, 2, 0))
    rmap = G.rasterize_geometry(posed, rig.faces, rig.uv, cam, maps.resolution)
    neural = G.sample_texture_np(rmap, neural_tex.data).transpose(1, 2, 0)
    phys = G.sample_texture_np(
        rmap, np.ascontiguousarray(phys_tex.transpose(2, 0, 1))).transpose(1, 2, 0)
    return neural, phys, rmap.coverage


def train_step(model: RelightModel, disc: Optional[MultiScaleDiscriminator],
               opt_g: Adam, opt_d: Optional[Adam], batch: List[Sample],
               cfg: TrainConfig, counters: L.LossCounters,
               rng: np.random.Generator) -> Dict[str, float]:
    weights = L.LossWeights(cfg.lambda_img,
                            cfg.lambda_gan if cfg.use_gan else 0.0,
                            cfg.lambda_reg if cfg.use_l1reg else 0.0)
    opt_g.zero_grad()
    scale = 1.0 / len(batch)
    logs = {"img_phys": 0.0, "img_neural": 0.0, "reg": 0.0, "gan_g": 0.0,
            "gan_d": 0.0, "lc": 0.0}
    total_g = None
    fakes = []
    outs = []
    for smp in batch:
        out = forward_sample(model, smp)
        outs.append(out)
        l_phys, _ = L.masked_pyramid_l1(out["phys_img"], smp.gt, smp.mask, counters)
        l_neur, _ = L.masked_pyramid_l1(out["neural_img"], smp.gt, smp.mask, counters)
        logs["img_phys"] += float(l_phys.data) * scale
        logs["img_neural"] += float(l_neur.data) * scale
        parts = {"img": T.add(l_phys, l_neur)}
        if weights.lambda_reg > 0 and out["enc_feats"]:
            reg = L.l1_feature_reg(out["enc_feats"])
            parts["reg"] = reg
            logs["reg"] += float(reg.data) * scale
        if disc is not None and weights.lambda_gan > 0:
            fake_scores = disc(out["neural_img"], Tensor(smp.cond_a),
                               Tensor(smp.cond_s))
            g_gan = L.hinge_g_loss(fake_scores)
            parts["gan"] = g_gan
            logs["gan_g"] += float(g_gan.data) * scale
        term = L.total_loss(parts, weights)
        total_g = term if total_g is None else T.add(total_g, term)

    if cfg.mode == "linearity-consistency" and len(batch) >= 2 \
            and cfg.lambda_lc > 0:
        nl_feats = model.nonlinear(Tensor(batch[0].tex),
                                   Tensor(batch[0].pose_vec))
        a1, a2 = float(rng.uniform(0.05, 1)), float(rng.uniform(0.05, 1))
        lc = L.linearity_consistency(model.linear, nl_feats,
                                     outs[0]["features"], outs[1]["features"],
                                     a1, a2)
        logs["lc"] = float(lc.data)
        total_g = T.add(total_g, T.scale(lc, cfg.lambda_lc))

    total_g = T.scale(total_g, scale)
    logs["total"] = float(total_g.data)

    d_loss = None
    if disc is not None and weights.lambda_gan > 0:
        real_scores, fake_scores = [], []
        for smp, out in zip(batch, outs):
            a, s = Tensor(smp.cond_a), Tensor(smp.cond_s)
            real_scores.extend(disc(Tensor(smp.gt), a, s))
            fake_scores.extend(disc(out["neural_img"].detach(), a, s))
        d_loss = L.hinge_d_loss(real_scores, fake_scores)
        logs["gan_d"] = float(d_loss.data)

    finite = all(np.isfinite(v) for v in logs.values())
    if not finite:
        counters.aborted_steps += 1
        logs["aborted"] = 1.0
        return logs

    T.backward(total_g)
    opt_g.step()
    if d_loss is not None:
        opt_d.zero_grad()
        T.backward(d_loss)
        opt_d.step()
    logs["aborted"] = 0.0
    return logs


def fit(model: RelightModel, ds, cfg: TrainConfig, ckpt_path,
        csv_path=None, progress: bool = False,
        resume_from=None) -> L.LossCounters:
    """Full training run; writes the checkpoint and the metrics CSV."""
    rng = np.random.default_rng(cfg.seed)
    cache = FrameCache(ds, model.resolution)
    rows = ds.frames(kind="part", split="train")
    if not rows:
        raise ValueError("dataset has no partially lit training frames")
    probe_rows = ds.frames(kind="part", split="holdout")[:4] or rows[:2]

    opt_g = Adam(model.named_params(), lr=cfg.lr)
    disc = MultiScaleDiscriminator(cfg.seed + 1) if cfg.use_gan else None
    opt_d = Adam(disc.named_params(), lr=cfg.lr_disc) if disc else None
    start_it = 0
    if resume_from is not None:
        loaded, header, extra = RelightModel.load(resume_from)
        from ..nn import load_params
        load_params(model.named_params(),
                    {k: v.data for k, v in loaded.named_params().items()})
        start_it = int(header.get("iteration", "0"))
        opt_g.load_state_arrays(extra)

    counters = L.LossCounters()
    csv_rows = []
    t0 = time.time()
    for it in range(start_it, cfg.iterations):
        lr = multistep_lr(cfg.lr, it, cfg.iterations)
        opt_g.lr = lr
        if opt_d:
            opt_d.lr = multistep_lr(cfg.lr_disc, it, cfg.iterations)
        pick = rng.choice(len(rows), size=min(cfg.batch_size, len(rows)),
                          replace=len(rows) < cfg.batch_size)
        batch = [cache.sample(rows[i]) for i in pick]
        logs = train_step(model, disc, opt_g, opt_d, batch, cfg, counters, rng)
        for k, v in logs.items():
            counters.history.setdefault(k, []).append(v)

        if csv_path and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            row = {"iteration": it, "lr": lr}
            row.update({k: logs.get(k, 0.0) for k in
                        ("total", "img_phys", "img_neural", "reg",
                         "gan_g", "gan_d", "lc")})
            if it % cfg.probe_every == 0 or it == cfg.iterations - 1:
                ps, ss = _probe(model, ds, cache, probe_rows)
                row["probe_psnr"] = ps
                row["probe_ssim"] = ss
            else:
                row["probe_psnr"] = ""
                row["probe_ssim"] = ""
            csv_rows.append(row)
        if progress and it % cfg.log_every == 0:
            print(f"[train] it {it} total {logs.get('total', float('nan')):.5f} "
                  f"({time.time() - t0:.0f}s)")
        if cfg.checkpoint_every and it and it % cfg.checkpoint_every == 0:
            _save(model, cfg, it + 1, ckpt_path, opt_g)

    _save(model, cfg, cfg.iterations, ckpt_path, opt_g)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(csv_rows[0].keys()))
            writer.writeheader()
            writer.writerows(csv_rows)
    return counters


def _save(model, cfg, iteration, path, opt_g):
    model.save(path,
               extra_header={"iteration": str(iteration), "seed": str(cfg.seed),
                             "use_gan": str(cfg.use_gan),
                             "use_l1reg": str(cfg.use_l1reg)},
               extra_arrays=opt_g.state_arrays())


def _probe(model, ds, cache, rows):
    ps, ss = [], []
    for row in rows:
        image, lights, pose, cam = ds.load_frame(row)
        smp = cache.sample(row)
        posed, maps, _ = cache.geometry(row["identity"], int(row["pose_id"]), pose)
        neural, _, mask = render_from_parts(
            model, ds.rig, posed, maps, smp.tex, pose, cam, lights, smp.vis)
        ps.append(psnr(neural, image, mask))
        ss.append(ssim(neural, image, mask))
    return float(np.mean(ps)), float(np.mean(ss))


def evaluate(model: RelightModel, ds, rows, cache: FrameCache = None,
             limit: int = 0, seed: int = 0) -> List[dict]:
    """Per-frame PSNR/SSIM of the neural render against dataset images."""
    cache = cache or FrameCache(ds, model.resolution)
    if limit and len(rows) > limit:
        rng = np.random.default_rng(seed)
        rows = [rows[i] for i in sorted(rng.choice(len(rows), limit, replace=False))]
    out = []
    for row in rows:
        image, lights, pose, cam = ds.load_frame(row)
        smp = cache.sample(row)
        posed, maps, _ = cache.geometry(row["identity"], int(row["pose_id"]), pose)
        neural, phys, mask = render_from_parts(
            model, ds.rig, posed, maps, smp.tex, pose, cam, lights, smp.vis)
        out.append({
            "identity": row["identity"], "frame": row["frame"],
            "split": row["split"],
            "psnr": psnr(neural, image, mask),
            "ssim": ssim(neural, image, mask),
            "psnr_physical": psnr(phys, image, mask),
            "ssim_physical": ssim(phys, image, mask),
        })
    return out
