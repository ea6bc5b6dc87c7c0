"""lineloc: Monte-Carlo localization against maps of linear features."""
