"""Scratch: benchmark knob exploration (not part of the package)."""
import numpy as np, time, sys
from eris.data import SyntheticConfig, gen_synthetic, lodo_split
from eris.model import ArchConfig, encode
from eris.train import TrainConfig, fit, evaluate_accuracy
from eris.evaluate import feature_correlation_matrix

def offdiag(m):
    o = ~np.eye(m.shape[0], dtype=bool)
    return float(np.mean(np.abs(m[o])))

def trial(tag, synth_kw, train_kw=None, seeds=(1, 2, 3), targets=(0, 1, 2, 3), verbose=False):
    defaults = dict(n_classes=4, n_domains=4, channels=3, length=32,
                    samples_per_domain_class=16, seed=11,
                    domain_scale_range=(1.0, 1.0))
    defaults.update(synth_kw)
    synth = SyntheticConfig(**defaults)
    ds = gen_synthetic(synth)
    arch = ArchConfig(channels_per_layer=(32,), kernel_size=5, in_channels=3,
                      encoding_dim=32, projection_dim=8, mlp_hidden=32, n_classes=4, n_domains=4)
    res = {}
    t0 = time.time()
    base_train = dict(epochs=100, batch_size=32, lr0=1e-3, lr_decay_every=50, repulsion_clamp=9.0)
    base_train.update(train_kw or {})
    for name, kw in [("G", {}), ("F", dict(enable_ortho=False)),
                     ("B", dict(enable_dse=False, enable_ortho=False, enable_ag=False))]:
        accs, ratios, corrs = [], [], []
        for seed in seeds:
            for target in targets:
                tr, te = lodo_split(ds, target)
                cfg = TrainConfig(seed=seed, **base_train, **kw)
                params, hist = fit(tr, cfg, arch)
                preds, _ = evaluate_accuracy(params, te)
                accs.append(float(np.mean(preds == te.class_labels)))
                cn = hist.column("cross_norm")
                ratios.append(cn[-1] / cn[0])
                corrs.append(offdiag(feature_correlation_matrix(encode(params, te.samples))))
        res[name] = (np.mean(accs), ratios, np.mean(corrs), np.std(accs), accs)
    g, f, b = res["G"], res["F"], res["B"]
    print(f"[{tag}] {time.time()-t0:.0f}s")
    print(f"  acc G={g[0]:.3f}±{g[3]:.2f} F={f[0]:.3f}±{f[3]:.2f} B={b[0]:.3f}±{b[3]:.2f} "
          f"{'OK' if g[0]>=f[0]>=b[0] else 'fail'}  (G-F={g[0]-f[0]:+.3f} F-B={f[0]-b[0]:+.3f})")
    print(f"  ratioG max={max(g[1]):.3f} mean={np.mean(g[1]):.3f} | ratioF min={min(f[1]):.3f}")
    print(f"  corr G={g[2]:.4f} F={f[2]:.4f} {'OK strict' if g[2]<f[2] else 'fail'}")
    if verbose:
        for nm in ("G", "F", "B"):
            print(f"    {nm} accs:", " ".join(f"{a:.2f}" for a in res[nm][4]))
    sys.stdout.flush()
    return res

if __name__ == "__main__":
    common = dict(domain_offset_range=(-0.8, 0.8), noise_stddev=0.1, channel_gain_jitter=0.4)
    trial("sc1.5 ladv0.1", dict(common, shortcut_strength=1.5), verbose=True)
    trial("sc2.5 ladv0.1", dict(common, shortcut_strength=2.5))
    trial("sc1.5 ladv0.5", dict(common, shortcut_strength=1.5), dict(lam_adv=0.5))
    trial("sc2.5 ladv0.5", dict(common, shortcut_strength=2.5), dict(lam_adv=0.5))
