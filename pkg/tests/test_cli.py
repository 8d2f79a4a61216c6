import json

import numpy as np
import pytest

from gklpca import ingest
from gklpca.cli import main


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "wall_time_s"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@pytest.fixture(scope="module")
def small_matrix(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--m", "150", "--n", "220", "--seed", "5", "--bed", "--out", str(out)]) == 0
    return out


def test_gen_deterministic(tmp_path, small_matrix):
    assert main(["gen", "--m", "150", "--n", "220", "--seed", "5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "matrix.gmx").read_bytes() == (small_matrix / "matrix.gmx").read_bytes()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 5 and "numpy" in manifest["versions"]


def test_gen_zero_matrix(tmp_path):
    assert main(["gen", "--m", "7", "--n", "9", "--r", "0", "--nsignal", "0", "--rkins", "0", "--out", str(tmp_path)]) == 0
    assert not ingest.read_dense(tmp_path / "matrix.gmx").any()


def test_gen_bed_matches_gmx(small_matrix):
    X = ingest.read_dense(small_matrix / "matrix.gmx")
    g = ingest.read_bed(small_matrix / "matrix")
    np.testing.assert_array_equal(g.dosages, X)


def test_pca_identity(tmp_path):
    ingest.write_dense(tmp_path / "eye.gmx", np.eye(6))
    assert main(["pca", str(tmp_path / "eye.gmx"), "-k", "1", "--out", str(tmp_path / "o")]) == 0
    s = ingest.read_csv(tmp_path / "o" / "singular_values.csv")
    assert s[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("source", ["matrix.gmx", "matrix"])
def test_pca_gkl_outputs(tmp_path, small_matrix, source):
    out = tmp_path / "pca"
    args = ["pca", str(small_matrix / source), "--algo", "gkl", "--reorth", "partial", "--omega", "1e-8", "--restart", "none", "-k", "5", "--out", str(out)]
    assert main(args) == 0
    s = ingest.read_csv(out / "singular_values.csv")[:, 0]
    X = ingest.read_dense(small_matrix / "matrix.gmx")
    np.testing.assert_allclose(s, np.linalg.svd(X, compute_uv=False)[:5], rtol=1e-10)
    U, V = ingest.read_dense(out / "U.gmx"), ingest.read_dense(out / "V.gmx")
    np.testing.assert_allclose(X @ V, U * s, atol=1e-6 * s[0])
    stats = json.loads((out / "stats.json").read_text())
    assert stats["converged"] and stats["mvps"] > 0 and "wall_time_s" in stats


def test_pca_subspace_normalize_history(tmp_path, small_matrix):
    out = tmp_path / "fp1"
    main(["pca", str(small_matrix / "matrix.gmx"), "--algo", "subspace", "--variant", "normalize", "-k", "4", "--max-iter", "12", "--out", str(out)])
    stats = json.loads((out / "stats.json").read_text())
    # the columns collapse onto the dominant direction, so delta-Y may look converged
    assert len(stats["invcond_history"]) == stats["iterations"] + 1
    assert stats["invcond_history"][-1] < 1e-6
    assert stats["rank_deficient"]


def test_pca_standardized(tmp_path, small_matrix):
    out = tmp_path / "std"
    assert main(["pca", str(small_matrix / "matrix.gmx"), "--standardize", "unit_variance", "-k", "3", "--out", str(out)]) == 0
    X = ingest.standardize(ingest.read_dense(small_matrix / "matrix.gmx")).values
    s = ingest.read_csv(out / "singular_values.csv")[:, 0]
    np.testing.assert_allclose(s, np.linalg.svd(X, compute_uv=False)[:3], rtol=1e-10)


def test_pca_unconverged_exit_code(tmp_path, small_matrix):
    code = main(["pca", str(small_matrix / "matrix.gmx"), "-k", "10", "--max-mvps", "10", "--out", str(tmp_path / "u")])
    assert code == 2
    assert json.loads((tmp_path / "u" / "stats.json").read_text())["converged"] is False


def test_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.gmx").write_bytes(b"NOPE" + bytes(12))
    assert main(["pca", str(tmp_path / "bad.gmx"), "--out", str(tmp_path / "o")]) == 3
    assert main(["pca", str(tmp_path / "missing.gmx"), "--out", str(tmp_path / "o")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["pca", "--no-such-flag"])
    assert exc.value.code == 4
    with pytest.raises(SystemExit) as exc:
        main(["bench", str(tmp_path / "bad.gmx"), "--out", str(tmp_path / "b")])  # --seed missing
    assert exc.value.code == 4
    ingest.write_dense(tmp_path / "eye.gmx", np.eye(3))
    assert main(["pca", str(tmp_path / "eye.gmx"), "-k", "5", "--out", str(tmp_path / "o")]) == 4


def test_spectrum_gaussian(tmp_path):
    A = np.random.default_rng(8).standard_normal((600, 400))
    ingest.write_dense(tmp_path / "g.gmx", A)
    assert main(["spectrum", str(tmp_path / "g.gmx"), "--out", str(tmp_path / "s")]) == 0
    rep = json.loads((tmp_path / "s" / "spectrum.json").read_text())
    assert abs(rep["rho"] - 1.5) < 0.15
    hist = np.loadtxt(tmp_path / "s" / "histogram.csv", delimiter=",", skiprows=1)
    assert hist.shape == (30, 4)
    # precomputed singular values give the same fit
    assert main(["spectrum", "--singvals", str(tmp_path / "s" / "singular_values.csv"), "--aspect", "1.5", "--out", str(tmp_path / "s2")]) == 0
    rep2 = json.loads((tmp_path / "s2" / "spectrum.json").read_text())
    assert rep2["rho"] == rep["rho"]


def test_spectrum_too_few_values(tmp_path):
    ingest.write_dense(tmp_path / "tiny.gmx", np.random.default_rng(0).standard_normal((20, 10)))
    assert main(["spectrum", str(tmp_path / "tiny.gmx"), "--out", str(tmp_path / "s")]) == 4


def test_bench_table(tmp_path, small_matrix, capsys):
    out = tmp_path / "bench"
    algos = "gkl-pro-nr,gkl-fro-tr,subspace-qr"
    assert main(["bench", str(small_matrix / "matrix.gmx"), "--seed", "1", "-k", "5", "--algos", algos, "--out", str(out)]) == 0
    table = json.loads((out / "bench.json").read_text())
    rows = {r["algorithm"]: r for r in table["rows"]}
    assert set(rows) == set(algos.split(","))
    for r in rows.values():
        # every algorithm agrees with the dense oracle to within its reported error
        assert r["rel_err"] * table["oracle"][-1] <= r["error_l1"] + 1e-9
    assert rows["gkl-pro-nr"]["mvps"] < rows["subspace-qr"]["mvps"]
    assert "algorithm" in capsys.readouterr().out


def test_bench_oracle_cap(tmp_path, small_matrix):
    out = tmp_path / "bench"
    assert main(["bench", str(small_matrix / "matrix.gmx"), "--seed", "1", "-k", "3", "--algos", "gkl-pro-nr", "--oracle-cap", "10", "--out", str(out)]) == 0
    assert json.loads((out / "bench.json").read_text())["rows"][0]["rel_err"] is None


def test_bench_unknown_algorithm(tmp_path, small_matrix):
    assert main(["bench", str(small_matrix / "matrix.gmx"), "--seed", "1", "--algos", "magic", "--out", str(tmp_path)]) == 4


def _phenotype_from_pc(small_matrix, tmp_path, noise):
    X = ingest.read_dense(small_matrix / "matrix.gmx")
    V = np.linalg.svd(X, full_matrices=False)[2].T
    y = 3.0 * V[:, 0] + noise * np.random.default_rng(3).standard_normal(X.shape[1])
    ingest.write_csv(tmp_path / "y.csv", y)
    return X, V, y


def test_regress_pc_phenotype(tmp_path, small_matrix):
    _phenotype_from_pc(small_matrix, tmp_path, noise=0.01)
    out = tmp_path / "r"
    assert main(["regress", "--genotypes", str(small_matrix / "matrix.gmx"), "--phenotype", str(tmp_path / "y.csv"), "-k", "2", "--out", str(out)]) == 0
    res = json.loads((out / "regression.json").read_text())
    assert len(res["markers"]) == 150
    fits = [mk for mk in res["markers"] if "error" not in mk]
    # PC1 coefficient is large and significant; the marker effect is not
    gam = np.array([mk["gamma"][0] for mk in fits])
    se = np.array([mk["stderr_gamma"][0] for mk in fits])
    assert np.all(np.abs(gam) / se > 10)
    t_beta = np.array([mk["beta"][1] / mk["stderr_beta"][1] for mk in fits])
    assert np.mean(np.abs(t_beta) < 3) > 0.95


def test_regress_design_exact_and_plain_ols(tmp_path, small_matrix):
    X, V, _ = _phenotype_from_pc(small_matrix, tmp_path, noise=0.0)
    D = np.column_stack([np.ones(X.shape[1]), X[0]])
    y = D @ [0.5, -1.5]
    ingest.write_csv(tmp_path / "D.csv", D)
    ingest.write_csv(tmp_path / "y0.csv", y)
    ingest.write_csv(tmp_path / "Z.csv", V[:, :2])
    out = tmp_path / "d"
    assert main(["regress", "--design", str(tmp_path / "D.csv"), "--covariates", str(tmp_path / "Z.csv"), "--phenotype", str(tmp_path / "y0.csv"), "--out", str(out)]) == 0
    fit = json.loads((out / "regression.json").read_text())["fit"]
    np.testing.assert_allclose(fit["beta"], [0.5, -1.5], atol=1e-10)
    np.testing.assert_allclose(fit["gamma"], [0.0, 0.0], atol=1e-10)
    out = tmp_path / "k0"
    assert main(["regress", "--design", str(tmp_path / "D.csv"), "--phenotype", str(tmp_path / "y0.csv"), "-k", "0", "--out", str(out)]) == 0
    fit = json.loads((out / "regression.json").read_text())["fit"]
    assert fit["gamma"] == [] and np.allclose(fit["beta"], [0.5, -1.5])


def test_regress_rank_deficient_marker_continues(tmp_path):
    G = np.random.default_rng(2).integers(0, 3, size=(4, 30)).astype(float)
    G[1] = 1.0  # monomorphic marker collinear with the intercept
    ingest.write_dense(tmp_path / "g.gmx", G)
    ingest.write_csv(tmp_path / "y.csv", np.random.default_rng(3).standard_normal(30))
    out = tmp_path / "r"
    assert main(["regress", "--genotypes", str(tmp_path / "g.gmx"), "--phenotype", str(tmp_path / "y.csv"), "-k", "0", "--out", str(out)]) == 0
    res = json.loads((out / "regression.json").read_text())
    assert res["n_rank_deficient"] == 1 and res["markers"][1]["column"] == 1
    assert "beta" in res["markers"][2]


def test_threads_flag(tmp_path, small_matrix):
    assert main(["--threads", "1", "pca", str(small_matrix / "matrix.gmx"), "-k", "2", "--out", str(tmp_path)]) == 0
