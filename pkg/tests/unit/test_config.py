# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import textwrap

import pytest

from sped_causal import config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        textwrap.dedent(
            """\
            # comment lines and blanks are skipped

            fit.n-folds = 4
            fit.learners = lasso, random_forest
            paths.output = /tmp/run
            fit.n-folds = 3
            """
        ),
        encoding="utf-8",
    )
    return path


class TestReadConfig:
    """Tests for key=value file parsing."""

    def test_later_keys_win(self, config_file):
        """The last occurrence of a key is kept."""
        assert config.read_config(config_file) == {
            "fit.n-folds": "3",
            "fit.learners": "lasso, random_forest",
            "paths.output": "/tmp/run",
        }

    def test_missing_file(self, tmp_path):
        with pytest.raises(config.ConfigError, match="does not exist"):
            config.read_config(tmp_path / "absent.cfg")

    @pytest.mark.parametrize(
        "line,message",
        [
            ("no separator here", "expected 'key = value'"),
            (" = value", "empty key"),
        ],
    )
    def test_malformed_line(self, tmp_path, line, message):
        """Malformed lines name the file and line number."""
        path = tmp_path / "bad.cfg"
        path.write_text(f"run.seed = 1\n{line}\n", encoding="utf-8")
        with pytest.raises(config.ConfigError, match=message) as excinfo:
            config.read_config(path)
        assert "bad.cfg:2" in str(excinfo.value)

    def test_value_keeps_equal_signs(self, tmp_path):
        path = tmp_path / "eq.cfg"
        path.write_text("effects.trimming = crump(a=0.1)\n", encoding="utf-8")
        assert config.read_config(path)["effects.trimming"] == "crump(a=0.1)"


class TestWriteConfig:
    """Tests for writing flat mappings."""

    def test_values_are_rendered(self, tmp_path):
        """Lists, booleans and None are written in their file form."""
        path = tmp_path / "out.cfg"
        config.write_config(
            path, {"a.list": ["x", "y"], "a.flag": True, "a.none": None, "a.num": 3}
        )
        assert path.read_text(encoding="utf-8") == (
            "a.list = x,y\na.flag = true\na.none = \na.num = 3\n"
        )

    def test_read_back(self, tmp_path):
        path = tmp_path / "out.cfg"
        config.write_config(path, {"fit.n-folds": 5, "fit.stratify": False})
        assert config.read_config(path) == {"fit.n-folds": "5", "fit.stratify": "false"}


class TestDefaults:
    """Tests for default handling."""

    def test_missing_keys_are_filled(self):
        merged = config.apply_defaults({"fit.n-folds": "3"})
        assert merged["fit.n-folds"] == "3"
        assert merged["policy.depth"] == "2"
        assert merged["effects.trimming"] == "none"
        assert set(config.DEFAULT_CONFIG) <= set(merged)

    def test_threads_default_to_available_cores(self, mocker):
        """The thread count is queried only when it is not configured."""
        cpu_count = mocker.patch("sped_causal.config.psutil.cpu_count", return_value=6)
        assert config.apply_defaults({})["run.threads"] == "6"
        cpu_count.reset_mock()
        assert config.apply_defaults({"run.threads": "2"})["run.threads"] == "2"
        cpu_count.assert_not_called()

    def test_unknown_core_count(self, mocker):
        mocker.patch("sped_causal.config.psutil.cpu_count", return_value=None)
        assert config.apply_defaults({})["run.threads"] == "1"

    def test_custom_defaults(self):
        assert config.apply_defaults({}, {"x.y": "1"}) == {"x.y": "1"}


class TestOptions:
    """Tests for section grouping and key remapping."""

    def test_get_options_groups_sections(self):
        flat = {"fit.n-folds": "5", "policy.depth": "3", "dgp.n": "10"}
        assert config.get_options(flat, "fit", "policy") == {
            "fit": {"n-folds": "5"},
            "policy": {"depth": "3"},
        }

    def test_get_options_nests_dots(self):
        assert config.get_options({"a.b.c": "1"}) == {"a": {"b": {"c": "1"}}}

    def test_context_compat(self):
        assert config.context_compat({"fit": {"n-folds": "5", "top-n": "2"}}) == {
            "fit": {"n_folds": "5", "top_n": "2"}
        }

    @pytest.mark.parametrize(
        "value,expected",
        [
            ("a, b,,c ", ["a", "b", "c"]),
            ("", []),
            (["x"], ["x"]),
        ],
    )
    def test_split_list(self, value, expected):
        assert config.split_list(value) == expected

    @pytest.mark.parametrize("value,expected", [("", None), ("  ", None), ("x", "x"), (3, 3)])
    def test_blank_to_none(self, value, expected):
        assert config.blank_to_none(value) == expected

    def test_override_skips_unset_values(self):
        merged = config.override(
            {"run.seed": "1"},
            [("run.seed", None), ("run.threads", 4), ("fit.stratify", False), ("x.l", ("a", "b"))],
        )
        assert merged == {
            "run.seed": "1",
            "run.threads": "4",
            "fit.stratify": "false",
            "x.l": "a,b",
        }
