"""Borrowing a foreign cluster's model for foreign test data.

Three clusters, each with a model trained on its own operating condition.
A client from the first cluster receives test data recorded under the
second condition: its own variance blows past the threshold, the second
cluster's model accepts the data, and predictions come from there.  Data
from a condition no cluster has seen is refused outright.
"""

import numpy as np

from fedfault.federation import ClientState, ClusterModelInfo, ood_resolve
from fedfault.signal import ConditionShift, SynthSpec, synth_generate, train_test_split
from fedfault.sngp import SngpConfig, dataset_variance, init_model, predict, train_epochs

PEAKS = (((40, 1.0),), ((55, 0.8),), ((70, 0.9),))
CONFIG = SngpConfig(num_classes=3, input_dim=512, hidden_dim=32, rff_dim=64,
                    mc_samples=50)


def condition(shift, seed):
    spec = SynthSpec(class_peaks=PEAKS, conditions=(ConditionShift(shift, 1.0),),
                     samples_per_class=60, seed=seed)
    return synth_generate(spec)


def main():
    models, trains, tests = [], [], []
    for i, shift in enumerate((0, 120, 240)):
        train, test = train_test_split(condition(shift, seed=i), 0.8, seed=i)
        model = init_model(CONFIG, seed=i)
        train_epochs(model, train, epochs=150, lr=0.05, rng=i)
        models.append(model)
        trains.append(train)
        tests.append(test)
        print(f"cluster {i}: trained on shift {shift:3d}, "
              f"train variance {dataset_variance(model, train):.5f}")

    infos = [
        ClusterModelInfo(exemplar_id=i, model=m,
                         train_variance=dataset_variance(m, tr))
        for i, (m, tr) in enumerate(zip(models, trains))
    ]
    client = ClientState(client_id=0, train=trains[0], test=tests[0],
                         model=models[0], rng=np.random.default_rng(0))

    foreign = ood_resolve(client, tests[1], infos)
    print(f"\nforeign test data: own variance {foreign.own_test_variance:.4f} "
          f"vs threshold {foreign.own_threshold:.4f}")
    print(f"decision: {foreign.status}, model of cluster {foreign.chosen_id}")
    acc = float(np.mean(foreign.predictions == tests[1].labels))
    own_acc = float(np.mean(predict(models[0], tests[1].features).labels
                            == tests[1].labels))
    print(f"borrowed model accuracy {acc:.3f} (own model would score {own_acc:.3f})")

    unseen = ood_resolve(client, condition(60, seed=99), infos)
    print(f"\nunseen condition: decision {unseen.status}, "
          f"candidate variances {[f'{v:.4f}' for v in unseen.candidate_variances.values()]}")
    print("predictions withheld" if unseen.predictions is None else "unexpected")


if __name__ == "__main__":
    main()
