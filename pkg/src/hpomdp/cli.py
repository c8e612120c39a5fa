"""Command-line entry point: ``hpomdp <command> ...``.

Exit codes: 0 success, 2 contract error (bad arguments or inputs that break
an operation's preconditions), 3 data error, 4 capacity error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .belief import init_belief, predict_response, update_belief
from .domain import ConceptGraph
from .evaluation import compute_metrics, cross_validate, format_metric_table, next_step_predictions
from .exceptions import ContractError, DataError, HPOMDPError
from .io import (ColumnMapping, DEFAULT_DECODER, dumps, ingest_logs, load_config, load_graph,
                 load_model, read_dataset, save_model, write_dataset)
from .learning import EMConfig, MEMBERSHIP_RULES, INITIAL_RULES, em_fit
from .planning import MODES, REDUCTIONS, PlannerConfig, action_values, best_action
from .simulation import (CohortResult, FixedPolicy, PlannerPolicy, RandomPolicy, simulate_cohort,
                         strategy_metrics, two_sample_t)

logger = logging.getLogger("hpomdp")


def _emit(doc, out=None) -> None:
    text = dumps(doc)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def _parse_history(text: str) -> list:
    """``q1:1,q2:0`` -> [("q1", 1), ("q2", 0)]."""
    steps = []
    for item in filter(None, (part.strip() for part in (text or "").split(","))):
        qid, sep, obs = item.rpartition(":")
        if not sep or obs not in ("0", "1"):
            raise ContractError(f"history entry {item!r} is not question:0|1")
        steps.append((qid, int(obs)))
    return steps


def _planner(args) -> PlannerConfig:
    return PlannerConfig(horizon=args.horizon, depth=args.depth, mode=args.mode,
                         action_reduction=args.reduction, discount=args.discount)


def _em_config(args) -> EMConfig:
    return EMConfig(k=args.k, restarts=args.restarts, seed=args.seed,
                    membership_rule=args.membership_rule, convergence_threshold=args.threshold,
                    max_iterations=args.max_iterations, state_mode=args.state_mode,
                    initial_distribution_rule=args.initial_rule, n_jobs=args.threads)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    decoder = dict(DEFAULT_DECODER)
    if args.partial_correct:
        decoder["I02"] = 1
    mapping = ColumnMapping(args.sequence_key, args.student_key, args.question_key,
                            args.concept_key, args.correctness_key, decoder)
    dataset, report = ingest_logs(args.log, mapping, load_graph(args.graph))
    write_dataset(dataset, args.out)
    _emit(report.as_dict(), args.report)
    return 0


def cmd_fit(args) -> int:
    dataset = read_dataset(args.dataset, load_graph(args.graph) if args.graph else None)
    result = em_fit(dataset, _em_config(args))
    save_model(result.model, args.out)
    for w in result.warnings:
        logger.warning(w)
    _emit({"k": args.k, "iterations": result.iterations, "converged": result.converged,
           "restart": result.restart_index, "log_likelihood": result.log_likelihood,
           "log_likelihood_trace": result.log_likelihood_trace})
    return 0


def cmd_eval_predict(args) -> int:
    if args.folds:
        dataset = read_dataset(args.dataset, load_graph(args.graph) if args.graph else None)
        report = cross_validate(dataset, folds=args.folds, config=_em_config(args),
                                baseline=not args.no_baseline, seed=args.seed,
                                include_first=not args.skip_first, rmse_form=args.rmse_form)
        columns = {f"H-POMDP(k={args.k})": report.hpomdp_mean}
        if report.pomdp:
            columns["POMDP"] = report.pomdp_mean
        sys.stdout.write(format_metric_table(columns, f"{args.folds}-fold cross-validation"))
        return 0
    if not args.model:
        raise ContractError("eval-predict needs --model, or --folds for cross-validation")
    model = load_model(args.model)
    dataset = read_dataset(args.dataset, model.graph)
    records = next_step_predictions(model, dataset.trajectories, not args.skip_first)
    report = compute_metrics(records, args.rmse_form)
    sys.stdout.write(format_metric_table({Path(args.model).stem: report}))
    return 0


def cmd_plan(args) -> int:
    model = load_model(args.model)
    belief = init_belief(model)
    for qid, obs in _parse_history(args.history):
        belief = update_belief(model, belief, qid, obs)
    config = _planner(args)
    values = action_values(model, belief, config)
    _emit({
        "action": best_action(model, belief, config),
        "values": values,
        "pattern_belief": belief.bm.tolist(),
        "concept_mastery": dict(zip(model.graph.concepts, belief.concept_mastery(model).tolist())),
    })
    return 0


def _policy(spec: str, args, truth):
    if spec == "random":
        return RandomPolicy([q.id for q in truth.questions])
    if spec.startswith("fixed:"):
        return FixedPolicy(spec.split(":", 1)[1])
    model = load_model(spec)
    if model.graph != truth.graph:
        raise ContractError("policy model and truth model use different concept graphs")
    return PlannerPolicy(model, _planner(args), label=Path(spec).stem)


def cmd_simulate(args) -> int:
    truth = load_model(args.truth)
    policy = _policy(args.policy, args, truth)
    result = simulate_cohort(truth, policy, args.horizon, args.students, args.seed)
    metrics = strategy_metrics(result, truth.graph)
    doc = {"concepts": list(truth.graph.concepts), "seed": args.seed, "horizon": args.horizon,
           **result.to_dict(), "metrics": metrics}
    _emit(doc, args.out)
    if args.out:
        _emit({"policy": result.policy_label, **metrics})
    return 0


def _cohort(path):
    doc = _read_json(path)
    try:
        return CohortResult.from_dict(doc), ConceptGraph(doc["concepts"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a cohort result ({exc})") from None


def cmd_compare(args) -> int:
    a, graph_a = _cohort(args.a)
    b, graph_b = _cohort(args.b)
    if graph_a.concepts != graph_b.concepts:
        raise ContractError("cohorts cover different concepts")
    ma, mb = strategy_metrics(a, graph_a), strategy_metrics(b, graph_b)
    t = two_sample_t(a.per_student_mastered, b.per_student_mastered)
    lines = [f"metric\t{a.policy_label}\t{b.policy_label}"]
    for c in graph_a.concepts:
        lines.append(f"pro({c})\t{ma['pro'][c]:.4f}\t{mb['pro'][c]:.4f}")
    lines.append(f"pro_sum\t{ma['pro_sum']:.4f}\t{mb['pro_sum']:.4f}")
    lines.append(f"var\t{ma['var']:.4f}\t{mb['var']:.4f}")
    lines.append(f"t\t{t:.4f}\tdf={len(a.per_student_mastered) + len(b.per_student_mastered) - 2}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_tutor(args) -> int:
    """Read answers from stdin: ``1``/``0`` answers the recommended
    question, ``<question> 1|0`` answers another one, ``quit`` stops."""
    model = load_model(args.model)
    belief = init_belief(model)
    config = _planner(args)
    for step in range(args.horizon, 0, -1):
        config = replace(config, horizon=step)
        ask = best_action(model, belief, config)
        mastery = ", ".join(f"{c}={p:.3f}" for c, p in zip(model.graph.concepts, belief.concept_mastery(model)))
        print(f"[{args.horizon - step + 1}] ask {ask} (P(correct)={predict_response(model, belief, ask):.3f}); "
              f"mastery {mastery}", flush=True)
        line = sys.stdin.readline()
        if not line or line.strip().lower() in ("q", "quit", "exit"):
            break
        parts = line.split()
        if len(parts) == 1:
            qid, obs = ask, parts[0]
        elif len(parts) == 2:
            qid, obs = parts
        else:
            print("expected '0', '1' or '<question> 0|1'", flush=True)
            continue
        if obs not in ("0", "1"):
            print("answer must be 0 or 1", flush=True)
            continue
        belief = update_belief(model, belief, qid, int(obs))
    mastery = ", ".join(f"{c}={p:.3f}" for c, p in zip(model.graph.concepts, belief.concept_mastery(model)))
    print(f"final mastery {mastery}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_em(p) -> None:
    p.add_argument("--k", type=int, default=3, help="number of learning patterns")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--membership-rule", choices=MEMBERSHIP_RULES, default="derived")
    p.add_argument("--initial-rule", choices=INITIAL_RULES, default="weighted")
    p.add_argument("--threshold", type=float, default=1e-4, help="convergence threshold")
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--state-mode", choices=("filtered", "full"), default="filtered")


def _add_planner(p, horizon: int = 10) -> None:
    p.add_argument("--horizon", type=int, default=horizon)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--mode", choices=MODES, default="receding")
    p.add_argument("--reduction", choices=REDUCTIONS, default="per-concept")
    p.add_argument("--discount", type=float, default=1.0)


def build_parser() -> tuple:
    parser = argparse.ArgumentParser(prog="hpomdp", description="Learning-pattern POMDP tutoring toolkit")
    parser.add_argument("--config", help="key = value file with option defaults")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for EM restarts")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("ingest", help="answer log -> canonical dataset file")
    p.add_argument("log")
    p.add_argument("--graph", required=True, help="concept graph JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the ingestion report here instead of stdout")
    p.add_argument("--sequence-key", default="seq_id")
    p.add_argument("--student-key", default="account_no")
    p.add_argument("--question-key", default="exam_id")
    p.add_argument("--concept-key", default="knowledge_concept_id")
    p.add_argument("--correctness-key", default="is_right")
    p.add_argument("--partial-correct", action="store_true", help="decode I02 as correct")
    p.set_defaults(func=cmd_ingest)
    commands["ingest"] = p

    p = sub.add_parser("fit", help="dataset -> model file")
    p.add_argument("dataset")
    p.add_argument("--graph")
    p.add_argument("--out", required=True)
    _add_em(p)
    p.set_defaults(func=cmd_fit)
    commands["fit"] = p

    p = sub.add_parser("eval-predict", help="next-answer prediction metrics")
    p.add_argument("dataset")
    p.add_argument("--model")
    p.add_argument("--folds", type=int, default=0, help="cross-validate with this many folds")
    p.add_argument("--graph")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--skip-first", action="store_true", help="do not score each trajectory's first answer")
    p.add_argument("--rmse-form", choices=("standard", "verbatim"), default="standard")
    _add_em(p)
    p.set_defaults(func=cmd_eval_predict)
    commands["eval-predict"] = p

    p = sub.add_parser("plan", help="recommend the next question")
    p.add_argument("model")
    p.add_argument("--history", default="", help="answered questions, e.g. q1:1,q2:0")
    _add_planner(p)
    p.set_defaults(func=cmd_plan)
    commands["plan"] = p

    p = sub.add_parser("simulate", help="roll out a cohort of simulated students")
    p.add_argument("truth", help="model that generates the students")
    p.add_argument("--policy", default="random",
                   help="model file to plan with, 'random', or 'fixed:<question>'")
    p.add_argument("--students", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_planner(p)
    p.set_defaults(func=cmd_simulate)
    commands["simulate"] = p

    p = sub.add_parser("compare", help="compare two cohort results")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_compare)
    commands["compare"] = p

    p = sub.add_parser("tutor", help="interactive belief and planning session on stdin")
    p.add_argument("model")
    _add_planner(p)
    p.set_defaults(func=cmd_tutor)
    commands["tutor"] = p
    return parser, commands


def _apply_config(parser, commands, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = load_config(known.config)
    for key, value in values.items():
        targets = [p for p in [parser, *commands.values()] if key in {a.dest for a in p._actions}]
        if not targets or key in ("config", "command", "func"):
            raise ContractError(f"{known.config}: unknown setting {key!r}")
        for p in targets:
            action = next(a for a in p._actions if a.dest == key)
            if action.nargs == 0:   # store_true flags
                value_bool = value.strip().lower() in ("1", "true", "yes", "on")
                p.set_defaults(**{key: value_bool})
            else:
                p.set_defaults(**{key: value})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        _apply_config(parser, commands, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except HPOMDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
