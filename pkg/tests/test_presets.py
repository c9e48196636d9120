import unittest

import numpy as np
import numpy.testing as npt

from errors import UnknownPreset
from expr import render
from presets import (chain_masses, chain_matrices, dictionary_for, forcing_function, get_preset, repeating_unit,
                     truth_lagrangian)


class TestPresets(unittest.TestCase):

    def test_lookup_ignores_case(self):
        self.assertEqual(get_preset('harmonicfree').name, 'HarmonicFree')
        with self.assertRaises(UnknownPreset):
            get_preset('Cartpole')

    def test_preset_overrides_stencil(self):
        self.assertEqual(dictionary_for(get_preset('Pendulum')).spec.stencil_order, 4)
        self.assertEqual(dictionary_for(get_preset('HarmonicFree')).spec.stencil_order, 2)

    def test_truth_lagrangians(self):
        self.assertEqual(render(truth_lagrangian(get_preset('HarmonicFree'))), '0.5*v0^2 - 250*x0^2')
        self.assertEqual(render(truth_lagrangian(get_preset('Pendulum'))), '0.5*v0^2 + 9.81*cos(x0)')
        self.assertEqual(render(truth_lagrangian(get_preset('HarmonicForced'))), '0.5*v0^2 - 250*x0^2 + 0.1*x0*f0')

    def test_mass_normalized_chain_matches_physical_matrices(self):
        preset = get_preset('ThreeDof')
        M, K = chain_matrices(preset)
        npt.assert_allclose(np.linalg.solve(M, K), 500.0 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 1]]))

    def test_triatomic_centre_mass(self):
        M, K = chain_matrices(get_preset('Triatomic'))
        npt.assert_allclose(np.diag(M), [1.0, 2.0, 1.0])
        npt.assert_allclose(np.linalg.solve(M, K), 1870.0 * np.array([[1, -1, 0], [-0.5, 1, -0.5], [0, -1, 1]]))

    def test_repeating_unit(self):
        self.assertEqual(repeating_unit([1.0, 2.0, 1.0]), (1.0, 2.0))
        self.assertEqual(repeating_unit([3.0, 3.0, 3.0]), (3.0,))
        self.assertEqual(repeating_unit([1.0, 1.02, 1.0], rtol=0.05), (1.0,))
        self.assertEqual(chain_masses(get_preset('ThreeDof'), 4), [10.0] * 4)

    def test_forcing_signal(self):
        forcing = forcing_function(get_preset('HarmonicForced'))
        npt.assert_allclose(forcing(np.array([0.0, 0.25])), [[0.0], [10.0]], atol=1e-12)
        self.assertIsNone(forcing_function(get_preset('HarmonicFree')))

    def test_blade_sizes(self):
        preset = get_preset('BladeFlexion')
        self.assertEqual(preset.m, 100)
        self.assertEqual(preset.zero_shot_mode, 3)
        self.assertEqual(dictionary_for(preset).K, 500)


if __name__ == '__main__':
    unittest.main()
