"""Linearized HiMAT aircraft model with a constant-plus-sinusoid generator.

States: forward speed, angle of attack, pitch rate, pitch angle and two
first-order elevon/canard actuators. Outputs: angle of attack and pitch
angle. The generator has modes {0, +3j, -3j}; the desired moment asks both
outputs to track 0.1 times the sinusoid components.
"""
import numpy as np

from moments.systems import Plant, SignalGenerator

HIMAT_NAME = "himat"

HIMAT_A = np.array([
    [-0.0226, -36.6, -18.9, -32.1, 3.25, -0.76],
    [9.3e-5, -1.90, 0.983, -7.3e-4, -0.17, -0.005],
    [0.0123, 11.7, -2.63, 8.8e-4, -31.6, 22.4],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, -30.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, -30.0],
])

HIMAT_B = np.zeros((6, 2))
HIMAT_B[4, 0] = 30.0
HIMAT_B[5, 1] = 30.0

HIMAT_C = np.array([
    [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
])

HIMAT_P = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
])

HIMAT_S = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 3.0],
    [0.0, -3.0, 0.0],
])

HIMAT_L = np.eye(3)

HIMAT_M_DES = np.array([
    [0.0, 0.1, 0.0],
    [0.0, 0.0, 0.1],
])


def himat_plant() -> Plant:
    return Plant.from_matrices(HIMAT_A, HIMAT_B, HIMAT_C, HIMAT_P)


def himat_generator() -> SignalGenerator:
    return SignalGenerator(HIMAT_S, HIMAT_L)
