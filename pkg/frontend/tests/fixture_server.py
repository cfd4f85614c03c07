"""Serve a canned 12-task labeling round for the UI integration test.

Binds an ephemeral port, prints it on the first stdout line, then serves
until killed.
"""

import socket

import numpy as np
import uvicorn

from tripletboot.bootstrap import LabelRequest
from tripletboot.embednet import Sample
from tripletboot.labelsvc import LabelQueue, create_app

CATEGORIES = ["pen", "mug", "key"]
N_TASKS = 12
DIM = 4


def fixture_requests(rng) -> list:
    exemplars = {
        cat: [Sample(f"ex-{cat}-{j}", rng.normal(size=DIM), label=cat) for j in range(3)]
        for cat in range(len(CATEGORIES))
    }
    requests = []
    for i in range(N_TASKS):
        cat = i % len(CATEGORIES)
        candidate = Sample(f"cand-{i:02d}", rng.normal(size=DIM))
        requests.append(LabelRequest(candidate, cat, 1.0 - 0.05 * i, exemplars[cat]))
    return requests


def main():
    queue = LabelQueue()
    queue.start_round(1, fixture_requests(np.random.default_rng(7)))
    app = create_app(queue, CATEGORIES)

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    print(sock.getsockname()[1], flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])


if __name__ == "__main__":
    main()
