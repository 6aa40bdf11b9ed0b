"""Model zoo: train every relational kind on one synthetic graph and
compare test accuracy, AUC, and how much attribute signal the frozen
entity embeddings carry (measured by a linear-regression probe).

The multi-task kind additionally reports its direct attribute predictions,
which is the comparison the library exists to make: joint training against
single-task embeddings plus a probe.

Run with:  python3 demos/02_model_zoo.py   (about a minute)
"""

import time

from kgmtl import (
    MODEL_KINDS,
    ModelSpec,
    SyntheticConfig,
    TrainConfig,
    attribute_prediction_report,
    build_knowledge_graph,
    classification_report,
    gen_synthetic,
    probe_linear_regression,
    train_model,
)

syn = gen_synthetic(SyntheticConfig(n_entities=400, n_relations=4,
                                    n_attributes=4, noise=0.05, seed=11))
kg = build_knowledge_graph(syn.rel_rows, syn.attr_rows, seed=11)
sizes = kg.sizes()
splits = kg.splits

print(f"{'model':<8} {'acc':>6} {'auc':>6} {'probe rmse':>11} "
      f"{'direct rmse':>12} {'seconds':>8}")
for kind in MODEL_KINDS:
    spec = ModelSpec(kind=kind, n_entities=sizes["entities"],
                     n_relations=sizes["relations"],
                     n_attributes=sizes["attributes"],
                     entity_dim=20, relation_dim=20, attr_dim=20,
                     hidden_dim=40, attr_hidden_dim=40, dropout=0.2)
    cfg = TrainConfig(model=spec, batch_size=200, iterations=800, lr=3e-3,
                      ast_k=8, seed=0, margin=1.0)
    t0 = time.perf_counter()
    result = train_model(kg, cfg)
    seconds = time.perf_counter() - t0
    cls = classification_report(result.model, splits)

    probe = probe_linear_regression(result.model.store.value("emb/entity"),
                                    splits.attr_train, splits.attr_dev,
                                    splits.attr_test)
    direct = ""
    if result.model.is_multitask:
        reg = attribute_prediction_report(result.model, splits)
        direct = f"{reg.metrics['rmse']:12.3f}"
    print(f"{kind:<8} {cls.metrics['accuracy']:6.3f} "
          f"{cls.metrics['auc']:6.3f} {probe.metrics['rmse']:11.3f} "
          f"{direct:>12} {seconds:8.1f}")
