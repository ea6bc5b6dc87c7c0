"""Tests for i18n module."""
from __future__ import annotations

import json
import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from errors import ConfigError, DegeneracyExceeded, LinelocError
from i18n import I18N, LOCALE_DIR


class TestI18N:
    def test_load_english(self, tmp_path: Path) -> None:
        en = {"hello": "Hello {name}"}
        (tmp_path / "en.json").write_text(json.dumps(en), encoding="utf-8")
        i = I18N(tmp_path)
        i.set_language("en")
        assert i.t("hello", name="World") == "Hello World"

    def test_fallback_to_key(self, tmp_path: Path) -> None:
        (tmp_path / "en.json").write_text("{}", encoding="utf-8")
        i = I18N(tmp_path)
        assert i.t("missing_key") == "missing_key"

    def test_fallback_to_default_language(self, tmp_path: Path) -> None:
        (tmp_path / "en.json").write_text(json.dumps({"only_en": "English text"}), encoding="utf-8")
        (tmp_path / "fr.json").write_text(json.dumps({"other": "autre"}), encoding="utf-8")
        i = I18N(tmp_path)
        i.set_language("fr")
        assert i.t("only_en") == "English text"

    def test_languages_from_catalog_files(self, tmp_path: Path) -> None:
        (tmp_path / "fr.json").write_text("{}", encoding="utf-8")
        assert I18N(tmp_path).languages() == ("en", "fr")

    def test_repo_catalogs(self) -> None:
        assert I18N().languages() == ("en", "fr")

    def test_set_unknown_language_falls_back(self, tmp_path: Path) -> None:
        (tmp_path / "en.json").write_text("{}", encoding="utf-8")
        i = I18N(tmp_path)
        i.set_language("xx")
        assert i.language == "en"

    def test_detect_system_language_returns_string(self, tmp_path: Path) -> None:
        (tmp_path / "en.json").write_text("{}", encoding="utf-8")
        assert isinstance(I18N(tmp_path).detect_system_language(), str)

    def test_bad_placeholder_returns_raw_text(self, tmp_path: Path) -> None:
        (tmp_path / "en.json").write_text(json.dumps({"x": "value {missing}"}), encoding="utf-8")
        assert I18N(tmp_path).t("x", other=1) == "value {missing}"


class TestDescribe:
    def test_keyed_error(self) -> None:
        text = I18N().describe(LinelocError("invalid_bounds", bounds=[0, 0, 0, 0]))
        assert text == "Invalid bounds [0, 0, 0, 0]"

    def test_error_list_joined(self) -> None:
        text = I18N().describe(ConfigError("invalid_config", errors=["a: bad", "b: worse"]))
        assert text == "Invalid configuration: a: bad; b: worse"

    def test_degeneracy_percentage(self) -> None:
        assert "25.0%" in I18N().describe(DegeneracyExceeded("degeneracy_exceeded", fraction=0.25, limit=0.2))

    def test_os_error(self) -> None:
        assert I18N().describe(FileNotFoundError("nope")).startswith("File error:")


class TestCatalogs:
    def test_every_raised_key_has_english_message(self) -> None:
        catalog = json.loads((LOCALE_DIR / "en.json").read_text(encoding="utf-8"))
        src = Path(__file__).resolve().parent.parent / "src"
        pattern = re.compile(r'(?:LinelocError|ConfigError|MapFormatError|ReplayFormatError|DegeneracyExceeded)\(\s*"([a-z_]+)"')
        keys = {key for file in src.glob("*.py") for key in pattern.findall(file.read_text(encoding="utf-8"))}
        assert keys
        missing = sorted(key for key in keys if f"error_{key}" not in catalog)
        assert missing == []

    def test_translations_use_known_keys(self) -> None:
        english = json.loads((LOCALE_DIR / "en.json").read_text(encoding="utf-8"))
        for file in LOCALE_DIR.glob("*.json"):
            catalog = json.loads(file.read_text(encoding="utf-8"))
            assert set(catalog) <= set(english), file.name
