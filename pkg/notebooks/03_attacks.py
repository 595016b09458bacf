# %% [markdown]
# Key-free attacks against the encrypted model. Pruning leaves it broken;
# fine-tuning and the adaptive replay repair a desk-sized model.

# %%
from advparams.pipeline import RunConfig, build_data, run_attack, run_encryption, train_model

cfg = RunConfig(seed=2)
train, test = build_data(cfg)
net = train_model(cfg, train)
run = run_encryption(cfg, net, train, test)
enc = run.outcome.network
print("A_o", run.report.acc_original, "A_e", run.report.acc_encrypted)

# %% magnitude pruning, per layer
print(run_attack("prune", cfg, enc, test).to_text())

# %% fine-tuning on 10% of the test split, scored on the other 90%
print(run_attack("finetune", cfg, enc, test).to_text())

# %% adaptive: replay the saliency steps backwards with known theta/alpha
print(run_attack("adaptive", cfg, enc, test).to_text())
