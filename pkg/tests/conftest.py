import pytest

from odmarl.empirical import exact_model_from_env
from odmarl.env import matrix_game, stationary_policy

MATRIX_BEHAVIOR = ([0.8, 0.2], [0.4, 0.6])


@pytest.fixture(scope="session")
def game():
    return matrix_game()


@pytest.fixture(scope="session")
def game_behavior(game):
    return stationary_policy(game, MATRIX_BEHAVIOR)


@pytest.fixture(scope="session")
def game_models(game, game_behavior):
    return [exact_model_from_env(game, game_behavior, i) for i in range(2)]
