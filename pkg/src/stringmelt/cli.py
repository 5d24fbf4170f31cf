"""Command-line pipelines: optimize pulses, validate artifacts, simulate
quench dynamics, and consolidate plot-ready reports.

Every subcommand takes a TOML config path plus key=value overrides; all
floating-point output is printed with 17 significant digits so files
round-trip exactly.  Exit codes: 0 success, 2 config error, 3 convergence
failure, 4 validation failure.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, load_config
from .controls import (
    ArtifactError,
    ChannelAnsatz,
    field_spectrum,
    load_pulse_artifact,
    sample_field,
    save_pulse_artifact,
    standard_ansatz,
)
from .device import (
    TransmonParams,
    excitation_block_check,
    extract_block,
    single_transmon_model,
    two_transmon_model,
)
from .goat import (
    finite_difference_gradient,
    gate_objective,
    propagate,
    unitarity_deficit,
)
from .optimize import (
    LBFGSOptions,
    OptimizationProblem,
    PulseOptimizationOutcome,
    make_target,
    optimize_pulse,
    worker_count,
)
from .spin1 import StringSpec, aklt_ground_state
from .trottersim import GateSet, ideal_gate_set, run_quench

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_VALIDATION = 4

TAU_DEPENDENT = ("x_field", "xyz_bond")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def artifact_name(label: str, tau: float | None) -> str:
    if label in TAU_DEPENDENT and tau is not None:
        return f"{label}_tau{tau:g}"
    return label


def models_from_config(cfg: dict):
    dev = cfg["device"]
    ctl = cfg["controls"]
    t1 = TransmonParams(dev["frequency_1"], dev["anharmonicity_1"], dev["levels"])
    t2 = TransmonParams(dev["frequency_2"], dev["anharmonicity_2"], dev["levels"])
    single = single_transmon_model(t1, microwave_bound=ctl["microwave_bound"])
    double = two_transmon_model(
        t1, t2,
        detuning_bound=ctl["detuning_bound"],
        coupling_bound=ctl["coupling_bound"],
    )
    return single, double


def problem_from_config(cfg: dict, label: str, tau: float | None) -> OptimizationProblem:
    single, double = models_from_config(cfg)
    ctl = cfg["controls"]
    q = cfg["quench"]
    model = double if label == "xyz_bond" else single
    ansatz = standard_ansatz(
        model,
        saturation_mode=ctl["saturation_mode"],
        ramp_fraction=ctl["ramp_fraction"],
    )
    target = make_target(
        label, lam=q["lam"], delta_b=q["delta_b"], tau=tau if tau else 0.1
    )
    return OptimizationProblem(
        label=label,
        model=model,
        ansatz=ansatz,
        target=target,
        d=model.computational_dim,
        use_leakage_penalty=(label != "xyz_bond"),
        lam=q["lam"],
        delta_b=q["delta_b"],
        tau=tau if tau else 0.1,
    )


def optimizer_options(cfg: dict) -> tuple[LBFGSOptions, LBFGSOptions]:
    o = cfg["optimizer"]
    fine = LBFGSOptions(
        max_iterations=o["max_iterations"],
        grad_tol=o["grad_tol"],
        rel_obj_tol=o["rel_obj_tol"],
        memory=o["memory"],
        abs_tol=o["abs_tol"],
        rel_tol=o["rel_tol"],
    )
    coarse = dataclasses.replace(
        fine, abs_tol=o["coarse_abs_tol"], rel_tol=o["coarse_rel_tol"]
    )
    return fine, coarse


def _infidelity_target(cfg: dict, label: str, tau: float | None) -> float | None:
    table = cfg["optimize"]["infidelity_targets"]
    if label in TAU_DEPENDENT and tau is not None and f"{label}_{tau:g}" in table:
        return table[f"{label}_{tau:g}"]
    return table.get(label)


def _write_outcome(
    outdir: Path,
    name: str,
    problem: OptimizationProblem,
    outcome: PulseOptimizationOutcome,
    cfg: dict,
):
    pulses = outdir / "pulses"
    traces = outdir / "traces"
    pulses.mkdir(parents=True, exist_ok=True)
    traces.mkdir(parents=True, exist_ok=True)

    gate = _gate_from_params(problem, outcome.parameters, cfg)
    metadata = {
        "tau": problem.tau,
        "lam": problem.lam,
        "delta_b": problem.delta_b,
        "use_leakage_penalty": problem.use_leakage_penalty,
        "leakage_weight": problem.leakage_weight,
        "rng_seed": outcome.rng_seed,
        "seeds_used": outcome.seeds_used,
        "stages": outcome.stages,
        "converged": outcome.converged,
        "infidelity_target": outcome.infidelity_target,
        "objective_at_optimizer_tolerance": outcome.objective,
        "verify_abs_tol": cfg["optimizer"]["abs_tol"] / 10.0,
        "verify_rel_tol": cfg["optimizer"]["rel_tol"] / 10.0,
        "gate_real": np.real(gate).tolist(),
        "gate_imag": np.imag(gate).tolist(),
        "ground_state_convention": "lowest Jz=0 eigenvector, smallest-index "
        "largest amplitude made real positive",
    }
    save_pulse_artifact(
        pulses / f"{name}.json",
        name,
        problem.model,
        problem.ansatz,
        outcome.parameters.values,
        outcome.verified_infidelity,
        outcome.verified_leakage,
        metadata,
    )

    rows = []
    for stage_idx, trace in enumerate(outcome.traces):
        for i, obj in enumerate(trace.objectives):
            rows.append(
                [
                    stage_idx,
                    i,
                    obj,
                    trace.grad_norms[i],
                    trace.step_lengths[i],
                    trace.wall_times[i],
                ]
            )
    _write_csv(
        traces / f"{name}_trace.csv",
        ["stage", "iteration", "objective", "grad_inf_norm", "step", "wall_time"],
        rows,
    )

    times, fields = None, []
    for i, ans in enumerate(problem.ansatz):
        p = outcome.parameters.channel_slice(i)
        times, values = sample_field(ans, p, dt=0.01)
        fields.append(values)
    chan_names = [
        f"{a.channel.kind}_{a.channel.carrier:g}GHz" for a in problem.ansatz
    ]
    _write_csv(
        pulses / f"{name}_waveform.csv",
        ["t_ns"] + chan_names,
        ([t] + [f[j] for f in fields] for j, t in enumerate(times)),
    )
    spec_cols = []
    freqs = None
    for i, ans in enumerate(problem.ansatz):
        p = outcome.parameters.channel_slice(i)
        freqs, power = field_spectrum(ans, p, dt=0.01)
        spec_cols.append(power)
    _write_csv(
        pulses / f"{name}_spectrum.csv",
        ["freq_GHz"] + chan_names,
        ([f] + [c[j] for c in spec_cols] for j, f in enumerate(freqs)),
    )


def _gate_from_params(problem, parameters, cfg) -> np.ndarray:
    result = propagate(
        problem.model,
        problem.ansatz,
        parameters,
        abs_tol=cfg["simulate"]["gate_tolerance"],
        rel_tol=cfg["simulate"]["gate_tolerance"],
        derivatives=None,
        compute_leakage=False,
    )
    return extract_block(result.u_final, problem.model)


@click.group()
def main():
    """Pulse-level simulation of string-order melting in spin-1 chains."""


def _load(config_path, overrides):
    try:
        return load_config(config_path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command("optimize")
@click.argument("config_path", required=False, type=click.Path())
@click.argument("overrides", nargs=-1)
@click.option("--target", "only_targets", multiple=True, help="Restrict to these target labels.")
def cmd_optimize(config_path, overrides, only_targets):
    """Design pulses for the configured target unitaries."""
    cfg = _load(config_path, overrides)
    outdir = Path(cfg["output"]["directory"])
    fine, coarse = optimizer_options(cfg)
    labels = cfg["optimize"]["targets"]
    if only_targets:
        unknown = set(only_targets) - set(labels)
        if unknown:
            click.echo(f"config error: unknown targets {sorted(unknown)}", err=True)
            sys.exit(EXIT_CONFIG)
        labels = [l for l in labels if l in only_targets]
    taus = sorted(cfg["optimize"]["taus"], reverse=True)
    n_seeds = cfg["optimizer"]["n_seeds"]
    rng_seed = cfg["optimizer"]["rng_seed"]

    all_converged = True
    for label in labels:
        tau_list = taus if label in TAU_DEPENDENT else [None]
        warm = None
        for tau in tau_list:
            problem = problem_from_config(cfg, label, tau)
            name = artifact_name(label, tau)
            target = _infidelity_target(cfg, label, tau)
            outcome = optimize_pulse(
                problem,
                rng_seed=rng_seed,
                n_seeds=n_seeds,
                options=fine,
                coarse_options=coarse,
                infidelity_target=target,
                initial=warm,
            )
            warm = outcome.parameters
            _write_outcome(outdir, name, problem, outcome, cfg)
            status = "ok" if outcome.converged else "NOT CONVERGED"
            click.echo(
                f"{name}: infidelity {outcome.verified_infidelity:.3e} "
                f"(target {target}) leakage {outcome.verified_leakage:.3e} "
                f"[{status}]"
            )
            all_converged = all_converged and outcome.converged
    sys.exit(EXIT_OK if all_converged else EXIT_CONVERGENCE)


@main.command("validate")
@click.argument("config_path", required=False, type=click.Path())
@click.argument("overrides", nargs=-1)
def cmd_validate(config_path, overrides):
    """Re-propagate stored pulses at tighter tolerance and audit them."""
    cfg = _load(config_path, overrides)
    outdir = Path(cfg["output"]["directory"])
    pulse_dir = outdir / "pulses"
    artifacts = sorted(pulse_dir.glob("*.json"))
    if not artifacts:
        click.echo(f"validation error: no pulse artifacts in {pulse_dir}", err=True)
        sys.exit(EXIT_VALIDATION)

    rel_tol = cfg["optimizer"]["rel_tol"] / 10.0
    abs_tol = cfg["optimizer"]["abs_tol"] / 10.0
    report = []
    all_ok = True
    for path in artifacts:
        entry = {"artifact": path.name}
        try:
            art = load_pulse_artifact(path)
        except ArtifactError as exc:
            entry["status"] = "refused"
            entry["reason"] = str(exc)
            report.append(entry)
            all_ok = False
            click.echo(f"{path.name}: REFUSED ({exc})")
            continue
        label = art.label.split("_tau")[0]
        meta = art.metadata
        target = make_target(
            label,
            lam=meta.get("lam", 0.2),
            delta_b=meta.get("delta_b", 0.2),
            tau=meta.get("tau", 0.1),
        )
        use_leak = meta.get("use_leakage_penalty", art.model.n_transmons == 1)
        result = propagate(
            art.model, art.ansatz, art.parameters,
            abs_tol=abs_tol, rel_tol=rel_tol,
            derivatives=None, compute_leakage=use_leak, engine="dense",
        )
        value = gate_objective(
            target, art.model, art.ansatz, art.parameters,
            use_leakage_penalty=use_leak,
            abs_tol=abs_tol, rel_tol=rel_tol, derivatives=None, engine="dense",
        )
        entry["infidelity_stored"] = art.infidelity
        entry["infidelity_reverified"] = value.infidelity
        entry["leakage_integral"] = value.leakage
        entry["unitarity_deficit"] = unitarity_deficit(result.u_final)
        scale = max(value.infidelity, art.infidelity, 1e-11)
        entry["infidelity_agreement"] = (
            abs(value.infidelity - art.infidelity) <= 0.10 * scale
        )
        if art.model.n_transmons == 2:
            entry["block_residual"] = excitation_block_check(
                result.u_final, art.model
            )
            entry["block_ok"] = entry["block_residual"] < 1e-10
        grad = gate_objective(
            target, art.model, art.ansatz, art.parameters,
            use_leakage_penalty=use_leak,
            abs_tol=1e-10, rel_tol=1e-10, derivatives="all", engine="dense",
        ).gradient
        check_idx = [int(np.argmax(np.abs(grad))), 0]
        fd = finite_difference_gradient(
            target, art.model, art.ansatz, art.parameters, check_idx,
            abs_tol=1e-10, rel_tol=1e-10,
            use_leakage_penalty=use_leak,
        )
        gerr = max(
            abs(fd[j] - grad[i]) / max(abs(grad[i]), abs(fd[j]), 1e-8)
            for j, i in enumerate(check_idx)
        )
        entry["gradient_check_rel_error"] = gerr
        entry["gradient_ok"] = gerr < 1e-4
        ok = entry["infidelity_agreement"] and entry.get("block_ok", True) and entry["gradient_ok"]
        entry["status"] = "ok" if ok else "failed"
        all_ok = all_ok and ok
        report.append(entry)
        click.echo(
            f"{path.name}: infidelity {value.infidelity:.3e} "
            f"(stored {art.infidelity:.3e}) "
            f"unitarity {entry['unitarity_deficit']:.2e} [{entry['status']}]"
        )
    _atomic_write(
        outdir / "validation_report.json",
        json.dumps(report, indent=1, sort_keys=True) + "\n",
    )
    sys.exit(EXIT_OK if all_ok else EXIT_VALIDATION)


def _extracted_gate_set(cfg, tau: float) -> GateSet:
    outdir = Path(cfg["output"]["directory"])
    pulse_dir = outdir / "pulses"
    tol = cfg["simulate"]["gate_tolerance"]
    gates = {}
    provenance = {"source": "extracted", "tolerance": tol, "artifacts": {}}
    for label in ("x_field", "zx_rotation", "zy_rotation", "xyz_bond"):
        name = artifact_name(label, tau)
        path = pulse_dir / f"{name}.json"
        if not path.exists():
            raise ConfigError(
                f"extracted-gate simulation needs artifact {path}; run optimize first"
            )
        art = load_pulse_artifact(path)
        result = propagate(
            art.model, art.ansatz, art.parameters,
            abs_tol=tol, rel_tol=tol, derivatives=None, compute_leakage=False,
        )
        gates[label] = extract_block(result.u_final, art.model)
        provenance["artifacts"][label] = {"file": path.name, "sha256": art.sha256}
    return GateSet(
        g_x=gates["x_field"],
        g_xyz=gates["xyz_bond"],
        g_zx=gates["zx_rotation"],
        g_zy=gates["zy_rotation"],
        tau=tau,
        provenance=provenance,
    )


def _string_specs(cfg) -> list[StringSpec]:
    obs = cfg["observables"]
    n = cfg["quench"]["n_sites"]
    specs = []
    for a in obs["directions"]:
        for l in obs["string_l"]:
            if l > n:
                raise ConfigError(f"observables.string_l {l} exceeds n_sites {n}")
            specs.append(StringSpec(k=obs["string_k"], l=l, direction=a))
    return specs


@main.command("simulate")
@click.argument("config_path", required=False, type=click.Path())
@click.argument("overrides", nargs=-1)
@click.option("--gate-source", type=click.Choice(["ideal", "extracted"]), default=None)
def cmd_simulate(config_path, overrides, gate_source):
    """Run Trotterized quench trajectories and emit plot-ready CSVs."""
    cfg = _load(config_path, overrides)
    if gate_source:
        cfg["simulate"]["gate_source"] = gate_source
    source = cfg["simulate"]["gate_source"]
    q = cfg["quench"]
    obs = cfg["observables"]
    outdir = Path(cfg["output"]["directory"])
    traj_dir = outdir / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)

    try:
        specs = _string_specs(cfg)
        n_samples = int(round(q["t_final"] / q["sample_spacing"]))
        tasks = []
        for tau in q["taus"]:
            layers = int(round(q["sample_spacing"] / tau))
            if abs(layers * tau - q["sample_spacing"]) > 1e-9:
                raise ConfigError(
                    f"sample spacing {q['sample_spacing']} is not an integer "
                    f"number of Trotter layers of size {tau}"
                )
            if source == "ideal":
                gates = ideal_gate_set(tau, lam=q["lam"], delta_b=q["delta_b"])
            else:
                gates = _extracted_gate_set(cfg, tau)
            for n_x in q["n_x"]:
                tasks.append((tau, layers, n_x, gates))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    initial = aklt_ground_state(q["n_sites"])

    def run(task):
        tau, layers, n_x, gates = task
        return run_quench(
            initial,
            gates,
            n_x,
            layers,
            n_samples,
            string_specs=specs,
            lam=q["lam"],
            delta_b=q["delta_b"],
            sample_spacing=q["sample_spacing"],
            shots=obs["shots"] or None,
            shot_seed=obs["shot_seed"],
        )

    workers = worker_count()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, tasks))
    else:
        records = [run(t) for t in tasks]

    for (tau, layers, n_x, gates), record in zip(tasks, records):
        record.metadata["gate_source"] = source
        stem = f"{source}_tau{tau:g}_nx{n_x}"
        record.to_csv(traj_dir / f"{stem}.csv")
        record.to_json(traj_dir / f"{stem}.json")
        mean_infid = float(np.mean(record.infidelities))
        click.echo(
            f"{stem}: time-averaged infidelity {mean_infid:.3e}, "
            f"final norm {record.norms[-1]:.6f}"
        )

    _emit_figure_csvs(cfg, source, records, tasks, outdir)
    sys.exit(EXIT_OK)


def _emit_figure_csvs(cfg, source, records, tasks, outdir: Path):
    """Fig-style aggregates: strings vs length at b=0.2, longest string vs b,
    and infidelity vs (t, b, tau)."""
    q = cfg["quench"]
    obs = cfg["observables"]
    fig_dir = outdir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    by_key = {
        (tau, n_x): rec for (tau, _, n_x, _), rec in zip(tasks, records)
    }
    n = q["n_sites"]
    l_max = max(obs["string_l"])

    for tau in q["taus"]:
        if (tau, 1) in by_key:
            rec = by_key[(tau, 1)]
            keys = sorted(rec.observables)
            header = ["t"]
            header += [f"obs_{k}" for k in keys] + [f"exact_{k}" for k in keys]
            rows = []
            for i, t in enumerate(rec.times):
                row = [t]
                row += [rec.observables[k][i] for k in keys]
                row += [rec.exact_observables[k][i] for k in keys]
                rows.append(row)
            _write_csv(
                fig_dir / f"{source}_strings_by_length_tau{tau:g}.csv", header, rows
            )

        cols = {}
        for n_x in q["n_x"]:
            if (tau, n_x) not in by_key:
                continue
            rec = by_key[(tau, n_x)]
            for a in obs["directions"]:
                key = f"{a}_{obs['string_k']}_{l_max}"
                if key in rec.observables:
                    cols[f"obs_{a}_nx{n_x}"] = rec.observables[key]
                    cols[f"exact_{a}_nx{n_x}"] = rec.exact_observables[key]
        if cols:
            rec0 = next(iter(by_key.values()))
            header = ["t"] + sorted(cols)
            rows = [
                [rec0.times[i]] + [cols[c][i] for c in sorted(cols)]
                for i in range(len(rec0.times))
            ]
            _write_csv(
                fig_dir / f"{source}_strings_l{l_max}_vs_b_tau{tau:g}.csv",
                header,
                rows,
            )

    cols = {}
    for (tau, _, n_x, _), rec in zip(tasks, records):
        cols[f"infid_tau{tau:g}_nx{n_x}"] = rec.infidelities
    rec0 = records[0]
    header = ["t"] + sorted(cols)
    rows = [
        [rec0.times[i]] + [cols[c][i] for c in sorted(cols)]
        for i in range(len(rec0.times))
    ]
    _write_csv(fig_dir / f"{source}_infidelity.csv", header, rows)


@main.command("report")
@click.argument("config_path", required=False, type=click.Path())
@click.argument("overrides", nargs=-1)
def cmd_report(config_path, overrides):
    """Summarize results and write gnuplot-ready .dat files."""
    cfg = _load(config_path, overrides)
    outdir = Path(cfg["output"]["directory"])
    report_dir = outdir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    traj_files = sorted((outdir / "trajectories").glob("*.json"))
    pulse_files = sorted((outdir / "pulses").glob("*[!_waveform][!_spectrum].json"))
    fig_files = sorted((outdir / "figures").glob("*.csv"))

    dat_count = 0
    for fig in fig_files:
        rows = fig.read_text().strip().split("\n")
        header = rows[0].split(",")
        body = [r.split(",") for r in rows[1:]]
        lines = ["# " + " ".join(header)]
        for r in body:
            lines.append(" ".join(r))
        _atomic_write(report_dir / (fig.stem + ".dat"), "\n".join(lines) + "\n")
        dat_count += 1

    lines = ["string-order melting results", "=" * 32]
    lines.append(f"pulse artifacts: {len(pulse_files)}")
    lines.append(f"trajectory records: {len(traj_files)}")
    lines.append(f"figure tables: {len(fig_files)}")
    lines.append(f"gnuplot files written: {dat_count}")
    for path in traj_files:
        payload = json.loads(path.read_text())
        infid = payload["infidelities"]
        meta = payload["metadata"]
        lines.append(
            f"  {path.stem}: b={meta['b']:g} tau={meta['tau']:g} "
            f"mean_infidelity={np.mean(infid):.6e} final_norm={payload['norms'][-1]:.8f}"
        )
    summary = "\n".join(lines) + "\n"
    _atomic_write(report_dir / "summary.txt", summary)
    click.echo(summary)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
