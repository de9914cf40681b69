"""Plain cross entropy vs reweighted training on the shifted benchmark.

Cross entropy happily learns the answer statistics of each question
type: high in-distribution accuracy, collapse on the shifted split.
With gamma=5 the reweighting removes most of the gradient on
prior-revealing samples, and the model is forced onto the image.
"""
import numpy as np

from debiasvqa import (
    BenchmarkConfig,
    LossVariant,
    ModelConfig,
    TrainConfig,
    evaluate,
    make_benchmark,
    train,
)

config = BenchmarkConfig()
train_split, id_test, ood_test = make_benchmark(config)
model = ModelConfig(vocab_size=config.vocab_size, num_answers=config.num_answers,
                    v_in_dim=config.v_in_dim, seed=0)

results = {}
for name, variant in (("ce", LossVariant.ce()), ("lpf(5)", LossVariant.lpf(5.0))):
    params, log = train(train_split, TrainConfig(variant=variant, model=model, seed=0))
    results[name] = (params, log)
    print(f"= {name} =")
    print("  epoch  train_acc  mean_alpha  mean_beta")
    for i in (0, 5, 10, 15, 20):
        e = log.epochs[i]
        print(f"  {i:5d}  {e.train_accuracy:9.3f}  {e.mean_alpha:10.3f}  {e.mean_beta:9.3f}")
    print()

print("= accuracy on both test splits =")
print("  variant   in-dist   shifted")
for name, (params, _) in results.items():
    rid = evaluate(params, id_test)
    rood = evaluate(params, ood_test)
    print(f"  {name:8s} {rid.overall_accuracy:8.3f}  {rood.overall_accuracy:8.3f}")

print("\n= where the predictions sit relative to the priors =")
print("  (mean KL from the predicted answer distribution, lower = closer)")
print("  variant   to train priors   to shifted priors")
for name, (params, _) in results.items():
    rood = evaluate(params, ood_test, train_priors=train_split.priors)
    print(f"  {name:8s} {rood.kl_to_train_prior.mean():15.2f}  "
          f"{rood.kl_to_split_prior.mean():17.2f}")
print("\nCross entropy stays glued to the training priors even on the shifted")
print("split; the reweighted model moves toward the split it is actually on.")
