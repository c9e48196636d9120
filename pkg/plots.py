# plots.py
"""Plot data export: CSV series and static SVG figures."""
import csv
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)


def write_series_csv(path, columns):
    """Write equally long named columns, one sample per row."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(names)
        writer.writerows(data.tolist())
    return path


def _save_svg(fig, path):
    fig.savefig(path, format='svg')
    plt.close(fig)
    logger.info(f"Saved figure to {path}")
    return path


def energy_plot(out_dir, name, t, found, actual, svg=False):
    paths = [write_series_csv(os.path.join(out_dir, f"{name}_energy.csv"),
                              {'t': t, 'H_discovered': found, 'H_true': actual})]
    if svg:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(t, actual, label='true')
        ax.plot(t, found, '--', label='discovered')
        ax.set_xlabel('t [s]')
        ax.set_ylabel('H')
        ax.set_title(f"{name}: total energy")
        ax.legend()
        paths.append(_save_svg(fig, os.path.join(out_dir, f"{name}_energy.svg")))
    return paths


def response_plot(out_dir, name, t, found, actual, coord=0, svg=False):
    paths = [write_series_csv(os.path.join(out_dir, f"{name}_response.csv"),
                              {'t': t, f"x{coord}_discovered": found[:, coord], f"x{coord}_true": actual[:, coord]})]
    if svg:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(t, actual[:, coord], label='true')
        ax.plot(t, found[:, coord], '--', label='discovered')
        ax.set_xlabel('t [s]')
        ax.set_ylabel(f"x{coord}")
        ax.set_title(f"{name}: response")
        ax.legend()
        paths.append(_save_svg(fig, os.path.join(out_dir, f"{name}_response.svg")))
    return paths


def error_plot(out_dir, name, t, error, svg=False):
    paths = [write_series_csv(os.path.join(out_dir, f"{name}_error.csv"), {'t': t, 'abs_error': error})]
    if svg:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.semilogy(t, np.maximum(error, np.finfo(float).tiny))
        ax.set_xlabel('t [s]')
        ax.set_ylabel('max |x_discovered - x_true|')
        ax.set_title(f"{name}: prediction error")
        paths.append(_save_svg(fig, os.path.join(out_dir, f"{name}_error.svg")))
    return paths
