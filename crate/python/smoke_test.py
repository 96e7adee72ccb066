"""Smoke test for the pycolorvein extension.

Build and install first:  pip install -e crates/py --no-build-isolation
"""

import math

import pycolorvein as cv


def main():
    images, truth = cv.generate_subject(seed=11, n_samples=2)
    assert images[0].shape == (64, 64)

    pattern = cv.segment(images[0])
    assert pattern.count_ones() > 50
    assert pattern.iou(truth[0]) > 0.3

    token = cv.IdentityToken("alice", "app-0", 0x1234)
    other = cv.IdentityToken("alice", "app-1", 0x1234)
    assert token.fingerprint != other.fingerprint
    assert len(token.fingerprint) == 32

    hints = cv.derive_hints(token, pattern, 10)
    assert len(hints) == 10
    rows = pattern.to_rows()
    assert all(rows[y][x] for x, y, _, _ in hints)

    colored = cv.protect(pattern, token)
    assert colored.token_fingerprint == token.fingerprint
    assert colored.offset == (0, 0)
    L, a, b = colored.planes()
    for x, y, ca, cb in hints:
        assert abs(a[y][x] - ca) < 0.05 and abs(b[y][x] - cb) < 0.05

    u = cv.FeatureVector([1.0, 2.0, 3.0] + [0.0] * 61)
    w = cv.FeatureVector([4.0, 5.0, 6.0] + [0.0] * 61)
    assert math.isclose(cv.match_score(u, w), 32 / math.sqrt(14 * 77), rel_tol=1e-12)

    eer, _ = cv.compute_eer([0.9, 0.8], [0.1, 0.2])
    assert eer == 0.0
    assert math.isclose(cv.decidability([0.0, 2.0], [1.0, 3.0]), 1.0)
    assert math.isclose(cv.unlinkability([0.9] * 4, [0.1] * 4), 1.0)

    try:
        cv.derive_hints(token, pattern, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("m = 0 must be rejected")

    print("pycolorvein", cv.__version__, "smoke test OK")


if __name__ == "__main__":
    main()
