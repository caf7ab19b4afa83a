"""Train a small counter end to end and evaluate it (about a minute on one core).

Run:  python3 demos/04_train_and_evaluate.py [OUT_DIR]

The full-size protocol lives in configs/synthetic_protocol.json and is what
the acceptance suite trains; this demo shrinks the data to stay quick.
"""
import sys
import tempfile
from pathlib import Path

from repcount import counting, data, metrics, network, render

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="repcount-demo-"))
out.mkdir(parents=True, exist_ok=True)

spec = data.SyntheticSpec(T_range=(64, 160), reps_range=(2, 8))
train = data.pairs_from(data.generate_dataset(spec, 60, seed=1))
test = data.pairs_from(data.generate_dataset(spec, 20, seed=2))

# %% Two stages of four dilated layers each; lambda weights the similarity loss.
net_cfg = network.NetworkConfig(input_dim=16, layers_per_stage=4, channels=16, lam=1e-5, seed=0)
train_cfg = network.TrainConfig(learning_rate=1e-3, batch_size=4, epochs=30)
print(f"receptive field: +/- {net_cfg.receptive_radius} frames")


def progress(epoch, report, state):
    if epoch % 5 == 4:
        print(f"epoch {epoch + 1:3d}: sse {report.sse:7.3f}  similarity loss {report.treco:9.1f}")


state, history = network.train(train, net_cfg, train_cfg, on_epoch=progress)
network.save_checkpoint(state, out / "demo.racw")

# %% Counting on unseen sequences, at several thresholds.
for res in metrics.evaluate(state, test, thresholds=(0.1, 0.2, 0.3, 0.4)):
    print(f"threshold {res.threshold}: OBOA {res.oboa:.3f}  MAE {res.mae:.3f}")

# %% One held-out sequence in detail.
seq, track = test[0]
probs = network.predict(state, seq)
n, kept = counting.count_repetitions(probs, 0.2)
print(f"true starts {list(track.starts)}")
print(f"kept peaks  {[p.index for p in kept]}  -> count {n} (truth {track.count()})")
render.write_ppm(out / "test0_probs.ppm", render.probability_trace(probs, [p.index for p in kept]))
print(f"outputs in {out}")
