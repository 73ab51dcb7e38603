#!/usr/bin/env python3
"""Regenerate include/anameta/builtin_vocab.hpp from the files in data/."""
import pathlib

root = pathlib.Path(__file__).resolve().parent.parent
files = [
    ("kBuiltinMeasureTypes", "measure_types.json"),
    ("kBuiltinDimensionTypes", "dimension_types.txt"),
    ("kBuiltinAggFunctions", "agg_functions.txt"),
    ("kBuiltinPropertyMap", "property_map.json"),
]
out = [
    "#pragma once",
    "",
    "// Generated by tools/embed_vocab.py from data/. Edit the data files and rerun.",
    "",
    "#include <string_view>",
    "",
    "namespace anameta::builtin {",
    "",
]
for name, fname in files:
    text = (root / "data" / fname).read_text(encoding="utf-8")
    out.append(f'inline constexpr std::string_view {name} = R"VOCAB({text})VOCAB";')
    out.append("")
out.append("}  // namespace anameta::builtin")
(root / "include" / "anameta" / "builtin_vocab.hpp").write_text("\n".join(out) + "\n", encoding="utf-8")
