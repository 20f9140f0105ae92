import diagnostic


def test_shape_chain_check(capsys):
    assert diagnostic.check_shape_chain()
    out = capsys.readouterr().out
    assert "MaxPooling2D" in out
    assert "257,162 parameters" in out


def test_gradient_check():
    assert diagnostic.check_gradients(seed=1)


def test_environment_check_reports_bad_settings(monkeypatch, capsys):
    monkeypatch.setenv("DIGIT_CNN_THREADS", "0")
    assert not diagnostic.check_environment()
    assert "❌" in capsys.readouterr().out


def test_full_diagnostics(monkeypatch, capsys):
    for name in ("DIGIT_CNN_THREADS", "DIGIT_CNN_SEED", "DIGIT_CNN_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    assert diagnostic.run_diagnostics()
    assert "ALL CHECKS PASSED" in capsys.readouterr().out
