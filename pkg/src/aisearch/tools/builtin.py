"""In-process stub tools: weather, calculator, web search over a local corpus, finance, geocoding.

Every stub is a pure function of its arguments (and the corpus), which is what
makes invocation replay-safe.
"""

from __future__ import annotations

import ast
import json
import operator
import re
from pathlib import Path
from typing import Any, Callable, Mapping

from ..core import Document

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

WEATHER = {
    "beijing": {"condition": "sunny", "low_c": 12, "high_c": 25},
    "shanghai": {"condition": "cloudy", "low_c": 16, "high_c": 22},
    "paris": {"condition": "rain", "low_c": 9, "high_c": 14},
}
GOLD_USD_PER_OUNCE = 2350.0
STOCKS = {"AMZN": 185.0, "BIDU": 98.0, "AAPL": 212.0}
FX = {("USD", "CNY"): 7.25, ("CNY", "USD"): 1 / 7.25, ("EUR", "USD"): 1.08, ("USD", "EUR"): 1 / 1.08}
PLACES = {"mount tai": (36.2566, 117.1010), "beijing": (39.9042, 116.4074), "paris": (48.8566, 2.3522)}

_STOP = frozenset("a an and are as at be by for from how in is it of on or the to what when where which who with".split())
_WORD = re.compile(r"[a-z0-9]+")


class ToolFault(Exception):
    """A stub-side failure, surfaced by the registry as a remote fault."""


def load_corpus(path: str | Path | None = None) -> list[Document]:
    path = Path(path) if path else DATA_DIR / "corpus.json"
    with open(path, encoding="utf-8") as fh:
        return [Document.from_wire(d) for d in json.load(fh)]


def _terms(text: str) -> list[str]:
    return [w for w in _WORD.findall(text.lower()) if w not in _STOP]


class Builtins:
    """Registry of ``builtin:<name>`` endpoints."""

    def __init__(self, corpus: list[Document] | None = None):
        self.corpus = corpus if corpus is not None else load_corpus()
        self._handlers: dict[str, Callable[[Mapping[str, Any]], Any]] = {
            "weather": self.weather,
            "calculator": self.calculator,
            "web_search": self.web_search,
            "gold_price": self.gold_price,
            "stock_quote": self.stock_quote,
            "fx_convert": self.fx_convert,
            "geocode": self.geocode,
            "echo": self.echo,
        }

    def register(self, name: str, handler: Callable[[Mapping[str, Any]], Any]) -> None:
        self._handlers[name] = handler

    def resolve(self, endpoint: str) -> Callable[[Mapping[str, Any]], Any]:
        name = endpoint.split(":", 1)[1] if endpoint.startswith("builtin:") else endpoint
        try:
            return self._handlers[name]
        except KeyError:
            raise ToolFault(f"no builtin endpoint {endpoint!r}") from None

    def weather(self, args):
        city = str(args["city"]).strip().lower()
        if city not in WEATHER:
            raise ToolFault(f"no weather data for {args['city']!r}")
        return dict(WEATHER[city])

    def calculator(self, args):
        variables = {k: v for k, v in args.items() if k != "expression"}
        return {"value": safe_eval(str(args["expression"]), variables)}

    def web_search(self, args):
        query = _terms(str(args["query"]))
        top_k = int(args.get("top_k", 3))
        scored = []
        for pos, doc in enumerate(self.corpus):
            words = _terms(doc.title + " " + doc.content)
            overlap = sum(1 for q in set(query) if q in words)
            if overlap:
                scored.append((-overlap, pos, doc))
        scored.sort(key=lambda t: (t[0], t[1]))
        return {"results": [
            {"id": d.id, "title": d.title, "content": d.content} for _, _, d in scored[:top_k]
        ]}

    def gold_price(self, args):
        ounces = float(args.get("ounces", 1.0))
        return {"usd": round(GOLD_USD_PER_OUNCE * ounces, 2), "usd_per_ounce": GOLD_USD_PER_OUNCE}

    def stock_quote(self, args):
        symbol = str(args["symbol"]).upper()
        if symbol not in STOCKS:
            raise ToolFault(f"unknown symbol {symbol}")
        shares = float(args.get("shares", 1.0))
        return {"symbol": symbol, "usd": round(STOCKS[symbol] * shares, 2)}

    def fx_convert(self, args):
        pair = (str(args["from"]).upper(), str(args["to"]).upper())
        if pair[0] == pair[1]:
            rate = 1.0
        elif pair in FX:
            rate = FX[pair]
        else:
            raise ToolFault(f"no rate for {pair}")
        return {"amount": round(float(args["amount"]) * rate, 2), "rate": rate}

    def geocode(self, args):
        place = str(args["place"]).strip().lower()
        if place not in PLACES:
            raise ToolFault(f"unknown place {args['place']!r}")
        lat, lon = PLACES[place]
        return {"lat": lat, "lon": lon}

    def echo(self, args):
        return {"echo": dict(args)}


_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: operator.pow, ast.Mod: operator.mod,
    ast.FloorDiv: operator.floordiv,
}
_FUNCS = {"abs": abs, "min": min, "max": max, "round": round}


def safe_eval(expression: str, variables: Mapping[str, Any] | None = None) -> float | int:
    """Evaluate an arithmetic expression over numeric variables without ``eval``."""
    variables = dict(variables or {})

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in variables:
                raise ToolFault(f"unbound variable {node.id!r}")
            value = variables[node.id]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ToolFault(f"variable {node.id!r} is not numeric")
            return value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ToolFault(f"unsupported expression element {type(node).__name__}")

    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise ToolFault(f"bad expression: {exc}") from exc
    try:
        return ev(tree)
    except (ZeroDivisionError, OverflowError, TypeError) as exc:
        raise ToolFault(str(exc)) from exc
