from flask import Flask, Response, jsonify, request
from flask_cors import CORS
import json
import os
import itertools
import time
import traceback
from threading import Thread

import numpy as np

from conflict_graph import as_rates, load_graph, parse_priority
from em_assign import best_em_assign
from errors import CapacityError, GreedySchedError, InputError
from sim_harness import SimConfig, convert_numpy_types, replicate
from stability import in_maximal_region, in_optimal_region, in_priority_region, test_feasibility

app = Flask(__name__)

# --- Configuration Constants ---
DEFAULT_ORIGINS = "http://localhost:5173"
MAX_SERVICE_HORIZON = int(os.environ.get("GREEDY_SCHED_MAX_HORIZON", 1_000_000))
MAX_SERVICE_RUNS = 100
POLL_SECONDS = 0.5

allowed_origins = [
    origin.strip()
    for origin in os.environ.get("GREEDY_SCHED_ALLOWED_ORIGINS", DEFAULT_ORIGINS).split(",")
    if origin.strip()
]
CORS(app, origins=allowed_origins, supports_credentials=True)


def _rates_argument(raw, n: int) -> np.ndarray:
    """Accepts a single uniform rate or n comma-separated rates."""
    if raw is None or raw == "":
        raise InputError("rates are required")
    if isinstance(raw, (list, tuple)):
        values = raw
    else:
        try:
            values = [float(v) for v in str(raw).split(",")]
        except ValueError as e:
            raise InputError(f"rates must be numbers, got {raw!r}") from e
    if len(values) == 1:
        values = list(values) * n
    return as_rates(values, n)


def _int_argument(name: str, default: int, upper: int | None = None) -> int:
    raw = request.args.get(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise InputError(f"{name} must be an integer, got {raw!r}") from e
    if upper is not None and value > upper:
        raise InputError(f"{name} is capped at {upper}")
    return value


@app.errorhandler(GreedySchedError)
def handle_input_error(e):
    return jsonify({"error": str(e)}), 400


# --- Region tests and assignment ---
@app.route("/api/check")
def check():
    graph_spec = request.args.get("graph")
    if not graph_spec:
        return jsonify({"error": "graph and rates are required"}), 400
    graph = load_graph(graph_spec)
    a = _rates_argument(request.args.get("rates"), graph.n)
    verdicts = [in_maximal_region(graph, a)]
    priority = request.args.get("priority")
    if priority:
        verdicts.append(in_priority_region(graph, parse_priority(priority.replace(",", " "), graph.n), a))
    verdicts.append(test_feasibility(graph, a))
    try:
        verdicts.append(in_optimal_region(graph, a))
    except CapacityError as e:
        print(f"⚠️ Skipping optimal region for {graph_spec}: {e}")
    return jsonify([v.to_dict() for v in verdicts])


@app.route("/api/assign-em", methods=["POST"])
def assign_em():
    body = request.get_json(silent=True) or {}
    if "graph" not in body or "rates" not in body:
        return jsonify({"error": "graph and rates are required"}), 400
    graph = load_graph(str(body["graph"]))
    a = _rates_argument(body["rates"], graph.n)
    state = best_em_assign(graph, a, restarts=int(body.get("restarts", 0)), seed=int(body.get("seed", 0)))
    return jsonify(convert_numpy_types(state.to_dict()))


# --- Simulation SSE Endpoint ---
@app.route("/api/simulate")
def simulate():
    graph = request.args.get("graph")
    scheduler = request.args.get("scheduler")
    arrivals = request.args.get("arrivals")

    if not graph or not scheduler or not arrivals:
        return jsonify({"error": "graph, scheduler, and arrivals are required"}), 400

    config = SimConfig(
        graph=graph,
        scheduler=scheduler,
        arrivals=arrivals,
        horizon=_int_argument("horizon", 10_000, MAX_SERVICE_HORIZON),
        runs=_int_argument("runs", 1, MAX_SERVICE_RUNS),
        seed=_int_argument("seed", 0),
    )

    def event_stream():
        spinner = itertools.cycle(["⏳", "🚀", "📡", "📶"])
        yield f"data: 🔍 Simulating {scheduler} on {graph} under {arrivals}\n\n"

        # Thread-safe containers for the background run
        finished_runs = []
        result_container = {}

        def run_replication():
            try:
                result_container["data"] = replicate(
                    config, callback=lambda run, result: finished_runs.append(result.to_dict())
                )
            except Exception as e:
                result_container["error"] = e
                result_container["trace"] = traceback.format_exc()

        thread = Thread(target=run_replication)
        thread.start()

        reported = 0
        while thread.is_alive() or reported < len(finished_runs):
            while reported < len(finished_runs):
                run = finished_runs[reported]
                yield f"data: ✅ run {run['run'] + 1}/{config.runs} max queue {run['final_max_queue']}\n\n"
                reported += 1
            if thread.is_alive():
                yield f"data: {next(spinner)} {reported}/{config.runs} runs done\n\n"
                time.sleep(POLL_SECONDS)
        thread.join()

        if "error" in result_container:
            error = result_container["error"]
            yield f"event: error\ndata: {json.dumps({'error': str(error), 'trace': result_container['trace']})}\n\n"
            yield "event: end\ndata: failed\n\n"
            return

        replication = result_container["data"]
        yield f"event: result\ndata: {json.dumps(replication.to_dict())}\n\n"
        yield "event: end\ndata: done\n\n"

    return Response(event_stream(), mimetype="text/event-stream")


if __name__ == "__main__":
    port = int(os.environ.get("PORT", 8000))
    app.run(host="0.0.0.0", port=port, debug=True)
