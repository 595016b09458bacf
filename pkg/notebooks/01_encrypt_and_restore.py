# %% [markdown]
# Encrypt a trained classifier by nudging a handful of weights, then undo it
# with the key. Run top to bottom: `python notebooks/01_encrypt_and_restore.py`.

# %%
import numpy as np

from advparams import nn
from advparams.checkpoint import to_bytes
from advparams.keystore import decrypt, dumps_key
from advparams.metrics import weight_stats
from advparams.pipeline import RunConfig, build_data, run_encryption, train_model

cfg = RunConfig(seed=0)
train, test = build_data(cfg)
print("train", train.inputs.shape, "test", test.inputs.shape)

# %% train the owner's model
net = train_model(cfg, train)
print("A_o", nn.evaluate_accuracy(net, test.inputs, test.labels))
print("weights per layer", [net.layers[i].weight.size for i in net.encryptable_layers])

# %% encrypt: 300 training samples drive the weight selection
run = run_encryption(cfg, net, train, test)
print(run.report.to_text())

# %% which weights moved, and by how much
for e in run.key.entries:
    w = net.layers[e.layer].weight.reshape(-1)[e.index]
    print(f"layer {e.layer:2d} index {e.index:6d}  {w:+.4f} -> {w + e.delta:+.4f}")

# %% the key is small JSON
print(dumps_key(run.key)[:400], "...")

# %% the distribution barely notices
before, after = weight_stats(net), weight_stats(run.outcome.network)
print("mean", before.mean, after.mean)
print("std ", before.std, after.std)

# %% restore
restored = decrypt(run.outcome.network, run.key)
print("bit-identical:", to_bytes(restored) == to_bytes(net))
print("restored accuracy", nn.evaluate_accuracy(restored, test.inputs, test.labels))
