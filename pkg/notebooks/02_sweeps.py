# %% [markdown]
# How the loss threshold, the choice of layer and the perturbation budget
# shape the encrypted accuracy.

# %%
from advparams.pipeline import RunConfig, build_data, sweep, train_model

cfg = RunConfig(seed=1)
train, test = build_data(cfg)
net = train_model(cfg, train)

# %% threshold: accuracy falls as T_loss rises, then flattens at chance
print(sweep("t_loss", cfg, net, train, test).to_text())

# %% one layer at a time, each with the whole iteration budget
print(sweep("layer", cfg, net, train, test).to_text())

# %% cap on perturbed weights
res = sweep("n_e", cfg, net, train, test)
print(res.to_text())
print("parameters:", net.n_params())
