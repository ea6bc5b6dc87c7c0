from __future__ import annotations

import json
import locale
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from errors import LinelocError

LOCALE_DIR = Path(__file__).resolve().parent.parent / "i18n"


class I18N:
    """Message catalogs for CLI output; error messages live under `error_<key>`."""

    def __init__(self, locale_dir: Path = LOCALE_DIR, default_language: str = "en") -> None:
        self.locale_dir = locale_dir
        self.default_language = default_language
        self.language = default_language
        self._catalogs: Dict[str, Dict[str, str]] = {}
        self._load_catalog(default_language)

    def languages(self) -> Tuple[str, ...]:
        found = {file.stem for file in self.locale_dir.glob("*.json")}
        found.add(self.default_language)
        return tuple(sorted(found))

    def detect_system_language(self) -> str:
        try:
            lang, _ = locale.getlocale()
        except ValueError:
            return self.default_language
        if not lang:
            return self.default_language
        return lang.split("_")[0]

    def set_language(self, language: Optional[str]) -> None:
        language = language or self.detect_system_language()
        if language not in self.languages():
            language = self.default_language
        self.language = language
        self._load_catalog(language)

    def t(self, key: str, **kwargs: object) -> str:
        catalog = self._catalogs.get(self.language, {})
        text = catalog.get(key, self._catalogs[self.default_language].get(key, key))
        if not kwargs:
            return text
        try:
            return text.format(**kwargs)
        except (KeyError, IndexError, ValueError):
            return text

    def describe(self, exc: Union[LinelocError, OSError]) -> str:
        if isinstance(exc, OSError):
            return self.t("error_io", detail=str(exc))
        params = dict(exc.params)
        if isinstance(params.get("errors"), list):
            params["errors"] = "; ".join(str(e) for e in params["errors"])
        return self.t(f"error_{exc.key}", **params)

    def _load_catalog(self, language: str) -> Dict[str, str]:
        if language not in self._catalogs:
            file = self.locale_dir / f"{language}.json"
            self._catalogs[language] = json.loads(file.read_text(encoding="utf-8")) if file.exists() else {}
        return self._catalogs[language]
