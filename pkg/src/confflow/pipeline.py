"""End-to-end steps shared by the command line and the tests: load and prepare
data, train from a run config, sample to XYZ directories, score them."""

import os
import re

import numpy as np

from .checkpoint import Checkpoint
from .equinet import init_params
from .errors import CheckpointError, ValidationError
from .flowrt import sample_conformers, train
from .metrics import SAMPLE_COEFFICIENT, EnsembleReport, cov_mat_metrics
from .moldata import (
    DatasetIndex,
    Provenance,
    format_xyz,
    group_and_clean,
    read_jsonl,
    read_xyz,
    split_dataset,
    strip_hydrogens,
)
from .otcfm import derive_seed

_SAFE_ID = re.compile(r"^[A-Za-z0-9._+=@,-][A-Za-z0-9._+=@,-]*$")


def load_molecules(path):
    """Read a JSONL file and merge records that share an id."""
    with open(path, "rb") as fh:
        records = read_jsonl(fh)
    mols, stats = group_and_clean(records)
    return DatasetIndex(mols, "unsplit", Provenance(str(path))), stats


def prepare(mols, run):
    """Hydrogen removal and the train/validation split a run config asks for."""
    mols = list(mols)
    if run.remove_hydrogen:
        mols = [strip_hydrogens(m) for m in mols]
    if run.split is None:
        return DatasetIndex(mols, "train"), None
    tr, va, _ = split_dataset(mols, run.split, run.train.seed)
    return tr, va


def _resumable_view(raw):
    view = dict(raw)
    view["runtime"] = {k: v for k, v in raw["runtime"].items() if k != "steps"}
    return view


def train_from_config(run, mols, resume=None, on_log=None):
    """Train (or continue training) and return the final :class:`Checkpoint`."""
    train_set, val_set = prepare(mols, run)
    data_hash = train_set.content_hash()
    if resume is None:
        params, opt, start = init_params(run.model, run.train.seed), None, 0
    else:
        if resume.dataset_hash != data_hash:
            raise CheckpointError("checkpoint was trained on a different dataset")
        if resume.train_config is None or _resumable_view(resume.train_config) != _resumable_view(run.to_dict()):
            raise CheckpointError("checkpoint was written with a different configuration")
        params, opt, start = resume.params, resume.opt_state, resume.step
        if start > run.train.steps:
            raise CheckpointError(f"checkpoint is at step {start}, beyond the configured {run.train.steps}")
    result = train(run.train, train_set, params, val_set, opt, start, run.train.steps, on_log)
    return Checkpoint(
        params=result.params,
        opt_state=result.opt_state,
        step=result.step,
        rng_state={"seed": run.train.seed, "next_step": result.step},
        dataset_hash=data_hash,
        train_config=run.to_dict(),
    )


def _check_id(mol_id):
    if not _SAFE_ID.match(mol_id) or mol_id in (".", ".."):
        raise ValidationError("id cannot be used as a directory name", mol_id)


def sample_molecules(ckpt, mols, per_molecule=None, steps=50, seed=0):
    """Generate conformers for each molecule. Returns ``{id: (molecule, samples)}``.

    Without ``per_molecule`` each molecule gets ``sample_coefficient`` times its
    reference conformer count.
    """
    run = ckpt.train_config or {}
    remove_h = bool(run.get("remove_hydrogen", True))
    coefficient = int(run.get("sample_coefficient", SAMPLE_COEFFICIENT))
    out = {}
    for mol in mols:
        if remove_h:
            mol = strip_hydrogens(mol)
        count = per_molecule if per_molecule is not None else coefficient * mol.num_conformers
        samples = sample_conformers(ckpt.params, mol, count, steps, derive_seed(seed, mol.id))
        out[mol.id] = (mol, samples)
    return out


def write_samples(samples, out_dir):
    """Lay out ``<out_dir>/<id>/<index>.xyz``."""
    for mol_id, (mol, xs) in samples.items():
        _check_id(mol_id)
        d = os.path.join(out_dir, mol_id)
        os.makedirs(d, exist_ok=True)
        gen = mol.with_conformers(xs)
        for i in range(gen.num_conformers):
            with open(os.path.join(d, f"{i}.xyz"), "w") as fh:
                fh.write(format_xyz(gen, i, f"{mol_id} sample {i}"))


def read_sample_dir(path):
    """XYZ files of one molecule directory, ordered by numeric file stem."""
    names = [n for n in os.listdir(path) if n.endswith(".xyz")]
    try:
        names.sort(key=lambda n: int(n[:-4]))
    except ValueError:
        names.sort()
    frames = []
    for n in names:
        with open(os.path.join(path, n)) as fh:
            frames.append(read_xyz(fh))
    return frames


def evaluate_dir(pred_dir, truth, delta=0.5, heavy_only=True):
    """Score every molecule directory under ``pred_dir`` against ``truth``."""
    by_id = {m.id: m for m in truth}
    subdirs = sorted(d for d in os.listdir(pred_dir) if os.path.isdir(os.path.join(pred_dir, d)))
    if not subdirs:
        raise ValidationError(f"no molecule directories under {pred_dir}")
    rows = []
    for mol_id in subdirs:
        if mol_id not in by_id:
            raise ValidationError("predictions given for a molecule missing from the reference set", mol_id)
        ref = strip_hydrogens(by_id[mol_id]) if heavy_only else by_id[mol_id]
        frames = read_sample_dir(os.path.join(pred_dir, mol_id))
        if not frames:
            raise ValidationError("prediction directory holds no XYZ files", mol_id)
        preds = []
        for z, x, _ in frames:
            z = np.asarray(z)
            keep = z != 1 if heavy_only else np.ones(len(z), bool)
            if not np.array_equal(z[keep], ref.atom_types):
                raise ValidationError("predicted atoms do not match the reference atoms", mol_id)
            preds.append(np.asarray(x)[keep])
        rows.append(cov_mat_metrics(preds, list(ref.conformers), delta, mol_id))
    return EnsembleReport(float(delta), rows)
