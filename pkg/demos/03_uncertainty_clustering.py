"""Group clients by who is confident on whose data.

Twelve clients hold partial-label data from three operating conditions.
After a little local training, every client evaluates every model on its
own training set; the resulting variance matrix, column-normalized and
flipped into a similarity, hands affinity propagation the block structure
of the true condition groups.
"""

import numpy as np

from fedfault.clustering import affinity_propagation
from fedfault.federation import (
    build_uncertainty_matrix,
    make_client_states,
    similarity_from_uncertainty,
)
from fedfault.scenarios import build_clients, preset_scenario_spec, preset_synth_spec
from fedfault.signal import synth_generate_by_condition
from fedfault.sngp import SngpConfig, train_epochs

CONFIG = SngpConfig(num_classes=3, input_dim=512, hidden_dim=32, rff_dim=64,
                    mc_samples=50)


def main():
    synth = preset_synth_spec("three-group", seed=0, samples_per_class=60)
    spec = preset_scenario_spec("three-group", scenario=2)
    data = synth_generate_by_condition(synth)
    clients = make_client_states(build_clients(data, spec, seed=0), CONFIG,
                                 seed=0, normalize_inputs=False)
    print("client  condition  labels held")
    for c, plan in zip(clients, spec.plans):
        print(f"  {c.client_id:2d}       {plan.condition_id}       {plan.labels}")

    for c in clients:
        train_epochs(c.model, c.train, epochs=5, lr=0.02, rng=c.client_id)

    matrix = build_uncertainty_matrix(clients, seed=0)
    sim = similarity_from_uncertainty(matrix)
    np.set_printoptions(precision=2, suppress=True, linewidth=120)
    print("\nraw cross-evaluation variance (row: data owner, col: model owner)")
    print(matrix.raw)
    print("\nsimilarity = 1 - column-normalized variance")
    print(sim)

    assignment = affinity_propagation(sim)
    print(f"\naffinity propagation: {assignment.num_clusters} clusters, "
          f"converged={assignment.converged}")
    for members, exemplar in zip(assignment.clusters, assignment.exemplars):
        ids = [clients[p].client_id for p in members]
        print(f"  exemplar client {clients[exemplar].client_id}: members {ids}")


if __name__ == "__main__":
    main()
