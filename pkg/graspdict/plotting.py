import logging

import numpy as np
import matplotlib
matplotlib.use("Agg")
from matplotlib.backends.backend_pdf import PdfPages
import matplotlib.pyplot as plt
import seaborn as sns

from graspdict import InputError
from graspdict.geometry import ObjectFrame, cyl_decode
from graspdict.skeleton import hand_bones

logger = logging.getLogger(__name__)

CYLINDER_ROWS = ("rho", "cos", "sin", "z")


class MissingOutputFile(InputError):
    pass


class FigureWriter:
    """Collects figures into ``<prefix>.pdf`` or one PNG per figure."""

    def __init__(self, output_prefix, output_format="pdf", png_dpi=150):
        if output_prefix is None or output_format not in ("pdf", "png"):
            raise MissingOutputFile(
                "Figures need an output prefix and the format pdf or png")
        self._output_prefix = output_prefix
        self._output_format = output_format
        self._png_dpi = png_dpi
        self._pp = None
        self.written = []

    def write(self, fig, title=""):
        if self._output_format == "pdf":
            if self._pp is None:
                self._pp = PdfPages(f"{self._output_prefix}.pdf")
                self.written.append(f"{self._output_prefix}.pdf")
            self._pp.savefig(fig)
        else:
            output_file_name = f"{self._output_prefix}.png" if title == "" \
                else f"{self._output_prefix}_{title}.png"
            fig.savefig(output_file_name, dpi=self._png_dpi)
            self.written.append(output_file_name)
        plt.close(fig)

    def close(self):
        if self._pp is not None:
            self._pp.close()
            self._pp = None
        logger.info("- Wrote %s", ", ".join(self.written))


def plot_pck(report, output_prefix, output_format="pdf"):
    writer = FigureWriter(f"{output_prefix}_pck", output_format)
    plt.style.use("ggplot")
    fig = plt.figure()
    ax = fig.add_subplot(1, 1, 1)
    for result in report.methods:
        if result.failed:
            continue
        ax.plot(report.thresholds, result.mean_pck(), "-", label=result.method)
    ax.set_xlabel("Error threshold (mm)")
    ax.set_ylabel("PCK")
    ax.set_ylim([0, 1])
    ax.legend()
    writer.write(fig)
    writer.close()


def plot_sweep(table, axis, output_prefix, output_format="pdf"):
    writer = FigureWriter(f"{output_prefix}_sweep", output_format)
    plt.style.use("ggplot")
    fig = plt.figure()
    ax = fig.add_subplot(1, 1, 1)
    for column in ("mpjpe_hand", "mpjpe_obj", "mpjpe_all",
                   "baseline_mpjpe_all"):
        if column in table:
            ax.plot(table["value"], table[column], "o-", label=column)
    ax.set_xlabel(axis)
    ax.set_ylabel("MPJPE (mm)")
    ax.legend()
    writer.write(fig)
    writer.close()


def plot_history(history, output_prefix, output_format="pdf"):
    writer = FigureWriter(f"{output_prefix}_history", output_format)
    plt.style.use("ggplot")
    for column in history.columns:
        if column == "epoch" or history[column].isna().all():
            continue
        fig = plt.figure()
        ax = fig.add_subplot(1, 1, 1)
        ax.plot(history["epoch"], history[column], "-", color="black")
        if (history[column] > 0).all():
            ax.set_yscale("log")
        ax.set_xlabel("Epoch")
        ax.set_title(column)
        writer.write(fig, title=column)
    writer.close()


def plot_atoms(dictionary, output_prefix, output_format="pdf"):
    """Heatmap of the atom matrix and a 3D view of every atom's hand."""
    writer = FigureWriter(f"{output_prefix}_atoms", output_format)
    atoms = dictionary.atoms
    row_labels = [f"j{row // 4}.{CYLINDER_ROWS[row % 4]}"
                  for row in range(atoms.shape[0])]
    fig = plt.figure(figsize=(8, 14))
    heatmap = sns.heatmap(atoms, cmap=sns.color_palette("RdBu_r", 500),
                          center=0.0, yticklabels=row_labels,
                          xticklabels=range(atoms.shape[1]))
    heatmap.tick_params(axis="y", labelsize=4)
    heatmap.set_xlabel("Atom")
    writer.write(fig, title="matrix")
    frame = ObjectFrame(origin=np.zeros(3), axes=np.eye(3))
    for atom_index in range(atoms.shape[1]):
        joints = cyl_decode(atoms[:, atom_index], frame)
        fig = plt.figure()
        ax = fig.add_subplot(1, 1, 1, projection="3d")
        for first, second in hand_bones():
            ax.plot(*joints[:, [first, second]], "-", color="black")
        ax.scatter(*joints, s=8, color="firebrick")
        ax.scatter([0], [0], [0], marker="s", color="steelblue")
        ax.set_title(f"Atom {atom_index}")
        writer.write(fig, title=f"atom{atom_index}")
    writer.close()
