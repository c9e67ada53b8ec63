import textwrap

import pytest

from hwnas.config import parse_config

MINIMAL_YAML = textwrap.dedent("""\
    study:
      name: unit
      store: {store}
      seed: 3
    dataset:
      kind: jet
      n: 240
      dims: 8
      classes: 3
      separation: 3.0
    space:
      params:
        - name: depth
          choices: [1, 2]
        - name: width_1
          choices: [8, 16]
        - name: width_2
          choices: [4, 8]
          active_when: {{param: depth, values: [2]}}
        - name: activation
          choices: [relu, tanh]
    objectives:
      - {{metric: accuracy, direction: maximize}}
      - {{metric: mean_utilization, direction: minimize}}
      - {{metric: latency_cycles, direction: minimize}}
    hls:
      board: VU13P
      default_precision: [16, 6]
    local_search:
      qat_epochs: 2
      iterations: 2
      epochs_per_iteration: 2
      pruning_rate: 0.2
      precisions: [[16, 6]]
    runtime:
      trial_budget: 8
      population_size: 4
      epochs_per_trial: 3
      batch_size: 64
      k_folds: 2
      surrogate: {{enabled: false, samples: 100, epochs: 40}}
    """)


@pytest.fixture
def tiny_config(tmp_path):
    text = MINIMAL_YAML.format(store=tmp_path / "study.journal")
    return parse_config(text)


@pytest.fixture
def tiny_config_text(tmp_path):
    return MINIMAL_YAML.format(store=tmp_path / "study.journal")
