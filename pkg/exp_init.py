"""Scratch experiment: init convergence variants (not part of the package)."""
import sys
import time
import numpy as np
from nimslam.config import SlamConfig
from nimslam.synth import default_room_scene, render_synth_sequence
from nimslam.geometry import CameraIntrinsics, Pose
from nimslam.slam import Frame, SlamEngine
from nimslam.implicit_map import init_map, init_decoder
from nimslam import objectives, optimizer
from nimslam.optimizer import AdamState, ParamSet
from nimslam.metrics import umeyama_alignment

from nimslam.synth import arc_path

scene = default_room_scene(0)
K = CameraIntrinsics(108., 108., 59.5, 44.5, 120, 90)
poses60 = arc_path(scene, 60)
seq = render_synth_sequence(scene, 13, K, seed=0, poses=poses60[:13])
lo, hi = scene.bounds()

def run(tag, budget, warmup, lr_pose, iters=700):
    cfg = SlamConfig(bounds_min=tuple(lo), bounds_max=tuple(hi),
                     voxel_sizes=(0.64,0.48,0.32,0.24,0.20,0.16),
                     pixel_budget=budget, lr_pose=lr_pose, seed=0)
    eng = SlamEngine(cfg)
    eng.pyramid = init_map(eng.bounds, cfg.voxel_sizes, cfg.channels, cfg.seed)
    eng.decoder = init_decoder(eng.pyramid.feature_dim, cfg.hidden_width, cfg.seed)
    frames = [Frame(i, np.ascontiguousarray(seq.image(i)), K, Pose.identity(), timestamp=i/10) for i in range(13)]
    for f in frames: eng.frames[f.index] = f
    trainable = np.zeros(13, dtype=bool); trainable[1:] = True
    frozen = np.zeros(13, dtype=bool)
    params_frozen = ParamSet(eng.pyramid, eng.decoder, frames, True, True, frozen)
    params = ParamSet(eng.pyramid, eng.decoder, frames, True, True, trainable)
    adam = AdamState()
    gt_pos = np.stack([seq.frames[i].gt_pose.translation for i in range(13)])
    def metrics():
        errs = []
        for fi in (2, 6, 10):
            vs, us, d = eng.render_depth_map(frames[fi], stride=6, counter=fi)
            gt = seq.frames[fi].gt_depth[np.ix_(vs, us)]
            s = np.median(gt) / np.median(d)
            errs.append(np.abs(d*s - gt).mean())
        est_pos = np.stack([f.pose.translation for f in frames])
        try:
            sc, R, t = umeyama_alignment(est_pos, gt_pos)
            ate = float(np.sqrt(np.mean(np.sum((sc*est_pos@R.T + t - gt_pos)**2, axis=1))))
        except Exception:
            ate = float('nan')
        return float(np.mean(errs)), ate
    t0 = time.time()
    for it in range(iters + 1):
        rng = eng._rng(2, it)
        p = params_frozen if it < warmup else params
        plan = objectives.build_iteration_plan(eng.pyramid, eng.decoder, frames, cfg, rng)
        ev = objectives.evaluate_objective(eng.pyramid, eng.decoder, frames, plan, cfg, want_grads=True, want_decoder_grads=True)
        grads = optimizer.backward(ev, p)
        optimizer.adam_step(p, grads, adam, cfg)
        if it % 175 == 0:
            de, ate = metrics()
            print(f'[{tag}] it {it}: loss={ev.losses.total:.3f} w={ev.losses.warping:.2f} mask={ev.mask_fraction:.2f} derr={de:.3f} ate={ate:.4f} [{time.time()-t0:.0f}s]', flush=True)

if __name__ == '__main__':
    which = sys.argv[1]
    variants = {
        'A': dict(budget=1000, warmup=0, lr_pose=0.01),
        'B': dict(budget=500, warmup=300, lr_pose=0.01),
        'C': dict(budget=1000, warmup=300, lr_pose=0.01),
        'D': dict(budget=500, warmup=0, lr_pose=0.003),
    }
    run(which, **variants[which])
