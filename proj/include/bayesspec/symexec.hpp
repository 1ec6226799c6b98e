// Copyright 2026 The bayesspec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/*
 * A small imperative language and its symbolic executor.
 *
 * Concrete syntax (one program per file):
 *
 *   program <name>
 *   var focus, n;                  // symbolic inputs
 *   x := n + 1;                    // assignment
 *   assume(x > 0);
 *   call setTitle(x);              // emits "setTitle" if in the alphabet
 *   if (c1) { ... } else if (c2) { ... } else { ... }
 *   while (c) { ... }
 *   #accept                        // location of interest
 *
 * Statements lower to a CFG whose edges are Assign, Assume or Call. An
 * if/else-if/else chain lowers to a single fan of assume edges leaving one
 * branch location, one edge per arm, with mutually exclusive guards (an
 * implicit empty else arm is added when absent).
 *
 * Symbolic execution turns the CFG into an automaton whose states are the
 * reachable symbolic states <location, store, loop visit counts>. Assigns
 * and out-of-alphabet calls emit epsilon with probability 1, in-alphabet
 * calls emit the method name with probability 1, and an assume fan emits
 * epsilon with probability 1/|C| to each arm whose guard is not refuted by
 * constant folding under the current store.
 */

#pragma once

#include <cctype>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "bayesspec/error.hpp"
#include "bayesspec/gpa.hpp"

namespace bayesspec::symexec {

// ---------------------------------------------------------------------------
// Expressions

enum class ExprKind { kInt, kBool, kVar, kNot, kNeg, kBinary };

enum class BinOp { kAdd, kSub, kMul, kEq, kNe, kLt, kLe, kGt, kGe, kAnd, kOr };

inline std::string_view binop_text(BinOp op) {
  switch (op) {
    case BinOp::kAdd: return "+";
    case BinOp::kSub: return "-";
    case BinOp::kMul: return "*";
    case BinOp::kEq: return "==";
    case BinOp::kNe: return "!=";
    case BinOp::kLt: return "<";
    case BinOp::kLe: return "<=";
    case BinOp::kGt: return ">";
    case BinOp::kGe: return ">=";
    case BinOp::kAnd: return "&&";
    case BinOp::kOr: return "||";
  }
  return "?";
}

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable expression tree; also used as the symbolic value domain.
struct Expr {
  ExprKind kind = ExprKind::kInt;
  std::int64_t ival = 0;
  bool bval = false;
  std::string var;
  BinOp op = BinOp::kAdd;
  ExprPtr lhs;
  ExprPtr rhs;

  static ExprPtr integer(std::int64_t v) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::kInt;
    e->ival = v;
    return e;
  }
  static ExprPtr boolean(bool v) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::kBool;
    e->bval = v;
    return e;
  }
  static ExprPtr variable(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::kVar;
    e->var = std::move(name);
    return e;
  }
  static ExprPtr unary(ExprKind k, ExprPtr operand) {
    auto e = std::make_shared<Expr>();
    e->kind = k;
    e->lhs = std::move(operand);
    return e;
  }
  static ExprPtr binary(BinOp op, ExprPtr l, ExprPtr r) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::kBinary;
    e->op = op;
    e->lhs = std::move(l);
    e->rhs = std::move(r);
    return e;
  }

  bool is_const() const { return kind == ExprKind::kInt || kind == ExprKind::kBool; }
};

/// Canonical fully-parenthesized text; equal strings mean equal trees.
inline std::string to_string(const Expr& e) {
  switch (e.kind) {
    case ExprKind::kInt: return std::to_string(e.ival);
    case ExprKind::kBool: return e.bval ? "true" : "false";
    case ExprKind::kVar: return e.var;
    case ExprKind::kNot: return "!(" + to_string(*e.lhs) + ")";
    case ExprKind::kNeg: return "-(" + to_string(*e.lhs) + ")";
    case ExprKind::kBinary:
      return "(" + to_string(*e.lhs) + " " + std::string(binop_text(e.op)) +
             " " + to_string(*e.rhs) + ")";
  }
  return "?";
}

/// Symbolic store: variable -> folded symbolic value. A variable that is
/// absent evaluates to itself (an unconstrained input).
using Store = std::map<std::string, ExprPtr>;

/// Evaluates `e` under `store` with constant folding.
inline ExprPtr fold(const ExprPtr& e, const Store& store) {
  switch (e->kind) {
    case ExprKind::kInt:
    case ExprKind::kBool:
      return e;
    case ExprKind::kVar: {
      auto it = store.find(e->var);
      return it == store.end() ? e : it->second;
    }
    case ExprKind::kNot: {
      ExprPtr x = fold(e->lhs, store);
      if (x->kind == ExprKind::kBool) return Expr::boolean(!x->bval);
      if (x->kind == ExprKind::kNot) return x->lhs;
      return Expr::unary(ExprKind::kNot, x);
    }
    case ExprKind::kNeg: {
      ExprPtr x = fold(e->lhs, store);
      if (x->kind == ExprKind::kInt) return Expr::integer(-x->ival);
      return Expr::unary(ExprKind::kNeg, x);
    }
    case ExprKind::kBinary:
      break;
  }
  ExprPtr l = fold(e->lhs, store);
  ExprPtr r = fold(e->rhs, store);
  const bool lb = l->kind == ExprKind::kBool;
  const bool rb = r->kind == ExprKind::kBool;
  if (e->op == BinOp::kAnd) {
    if ((lb && !l->bval) || (rb && !r->bval)) return Expr::boolean(false);
    if (lb) return r;
    if (rb) return l;
    return Expr::binary(e->op, l, r);
  }
  if (e->op == BinOp::kOr) {
    if ((lb && l->bval) || (rb && r->bval)) return Expr::boolean(true);
    if (lb) return r;
    if (rb) return l;
    return Expr::binary(e->op, l, r);
  }
  if (l->kind == ExprKind::kInt && r->kind == ExprKind::kInt) {
    const std::int64_t a = l->ival;
    const std::int64_t b = r->ival;
    switch (e->op) {
      case BinOp::kAdd: return Expr::integer(a + b);
      case BinOp::kSub: return Expr::integer(a - b);
      case BinOp::kMul: return Expr::integer(a * b);
      case BinOp::kEq: return Expr::boolean(a == b);
      case BinOp::kNe: return Expr::boolean(a != b);
      case BinOp::kLt: return Expr::boolean(a < b);
      case BinOp::kLe: return Expr::boolean(a <= b);
      case BinOp::kGt: return Expr::boolean(a > b);
      case BinOp::kGe: return Expr::boolean(a >= b);
      default: break;
    }
  }
  if (lb && rb) {
    if (e->op == BinOp::kEq) return Expr::boolean(l->bval == r->bval);
    if (e->op == BinOp::kNe) return Expr::boolean(l->bval != r->bval);
  }
  return Expr::binary(e->op, l, r);
}

enum class Feasibility { kTrueOnly, kFalseOnly, kUnknown };

/// Constant-propagation feasibility. No theory reasoning: a condition is
/// decided only when folding reduces it to a boolean literal.
inline Feasibility feasibility(const ExprPtr& cond, const Store& store) {
  ExprPtr v = fold(cond, store);
  if (v->kind == ExprKind::kBool) {
    return v->bval ? Feasibility::kTrueOnly : Feasibility::kFalseOnly;
  }
  return Feasibility::kUnknown;
}

// ---------------------------------------------------------------------------
// Control flow graph

using Location = std::uint32_t;

struct AssignOp {
  std::string var;
  ExprPtr value;
};
struct AssumeOp {
  ExprPtr cond;
};
struct CallOp {
  std::string method;
  std::vector<ExprPtr> args;
};
using Operation = std::variant<AssignOp, AssumeOp, CallOp>;

inline std::string to_string(const Operation& op) {
  if (auto* a = std::get_if<AssignOp>(&op)) {
    return a->var + " := " + to_string(*a->value);
  }
  if (auto* a = std::get_if<AssumeOp>(&op)) {
    return "assume(" + to_string(*a->cond) + ")";
  }
  const auto& c = std::get<CallOp>(op);
  std::string s = c.method + "(";
  for (std::size_t i = 0; i < c.args.size(); ++i) {
    if (i) s += ", ";
    s += to_string(*c.args[i]);
  }
  return s + ")";
}

struct Edge {
  Location from;
  Operation op;
  Location to;
};

/// An annotated location of interest.
struct AcceptPoint {
  Location location;
  std::string label;  // "line:<n>" for #accept annotations, "end" for T
};

struct Cfg {
  static constexpr Location kInitial = 0;
  static constexpr Location kTerminal = 1;

  std::string name;
  std::size_t num_locations = 2;
  std::vector<Edge> edges;
  std::set<Location> loop_heads;
  std::vector<AcceptPoint> accept_points;  // defaults to {T} when unannotated

  std::vector<std::size_t> outgoing(Location l) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].from == l) out.push_back(i);
    }
    return out;
  }
};

/// Structural CFG invariants; empty when valid.
inline std::vector<std::string> validate_cfg(const Cfg& g) {
  std::vector<std::string> out;
  std::vector<std::vector<std::size_t>> succ(g.num_locations);
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const Edge& e = g.edges[i];
    if (e.to == Cfg::kInitial) out.push_back("initial location has an incoming edge");
    if (e.from == Cfg::kTerminal) out.push_back("terminal location has an outgoing edge");
    succ[e.from].push_back(i);
  }
  for (Location l = 0; l < g.num_locations; ++l) {
    if (succ[l].size() > 1) {
      for (std::size_t i : succ[l]) {
        if (!std::holds_alternative<AssumeOp>(g.edges[i].op)) {
          out.push_back("location " + std::to_string(l) +
                        " mixes a non-assume edge into a branch");
          break;
        }
      }
    }
  }
  std::vector<bool> seen(g.num_locations, false);
  std::vector<Location> stack{Cfg::kInitial};
  seen[Cfg::kInitial] = true;
  while (!stack.empty()) {
    Location l = stack.back();
    stack.pop_back();
    for (std::size_t i : succ[l]) {
      if (!seen[g.edges[i].to]) {
        seen[g.edges[i].to] = true;
        stack.push_back(g.edges[i].to);
      }
    }
  }
  for (Location l = 0; l < g.num_locations; ++l) {
    if (!seen[l]) out.push_back("location " + std::to_string(l) + " is unreachable");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

enum class Tok {
  kIdent, kInt, kAssign, kSemi, kComma, kLParen, kRParen, kLBrace, kRBrace,
  kPlus, kMinus, kStar, kEq, kNe, kLt, kLe, kGt, kGe, kAnd, kOr, kNot,
  kAccept, kEof,
};

struct Token {
  Tok kind;
  std::string text;
  int line;
  int col;
};

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < src.size()) {
    char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    const int tl = line;
    const int tc = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) ||
                                src[j] == '_')) {
        ++j;
      }
      out.push_back({Tok::kIdent, std::string(src.substr(i, j - i)), tl, tc});
      advance(j - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      out.push_back({Tok::kInt, std::string(src.substr(i, j - i)), tl, tc});
      advance(j - i);
      continue;
    }
    if (c == '#') {
      std::size_t j = i + 1;
      while (j < src.size() && std::isalpha(static_cast<unsigned char>(src[j]))) ++j;
      if (src.substr(i + 1, j - i - 1) != "accept") {
        throw SyntaxError("unknown directive '" + std::string(src.substr(i, j - i)) + "'",
                          tl, tc);
      }
      out.push_back({Tok::kAccept, "#accept", tl, tc});
      advance(j - i);
      continue;
    }
    auto two = src.substr(i, 2);
    struct Punct {
      std::string_view text;
      Tok kind;
    };
    static constexpr Punct kTwo[] = {{":=", Tok::kAssign}, {"==", Tok::kEq},
                                     {"!=", Tok::kNe},     {"<=", Tok::kLe},
                                     {">=", Tok::kGe},     {"&&", Tok::kAnd},
                                     {"||", Tok::kOr}};
    bool matched = false;
    for (const auto& p : kTwo) {
      if (two == p.text) {
        out.push_back({p.kind, std::string(p.text), tl, tc});
        advance(2);
        matched = true;
        break;
      }
    }
    if (matched) continue;
    Tok k;
    switch (c) {
      case ';': k = Tok::kSemi; break;
      case ',': k = Tok::kComma; break;
      case '(': k = Tok::kLParen; break;
      case ')': k = Tok::kRParen; break;
      case '{': k = Tok::kLBrace; break;
      case '}': k = Tok::kRBrace; break;
      case '+': k = Tok::kPlus; break;
      case '-': k = Tok::kMinus; break;
      case '*': k = Tok::kStar; break;
      case '<': k = Tok::kLt; break;
      case '>': k = Tok::kGt; break;
      case '!': k = Tok::kNot; break;
      default:
        throw SyntaxError(std::string("unexpected character '") + c + "'", tl, tc);
    }
    out.push_back({k, std::string(1, c), tl, tc});
    advance(1);
  }
  out.push_back({Tok::kEof, "", line, col});
  return out;
}

struct Stmt;
using Block = std::vector<Stmt>;

struct Stmt {
  enum class Kind { kAssign, kAssume, kCall, kIf, kWhile, kAccept, kDecl } kind;
  int line = 0;
  std::string name;                                // assign target / callee
  ExprPtr expr;                                    // assign value / assume / while
  std::vector<ExprPtr> args;                       // call arguments
  std::vector<std::pair<ExprPtr, Block>> arms;     // if-chain arms
  std::optional<Block> else_block;                 // if-chain else
  Block body;                                      // while body
};

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  std::pair<std::string, Block> parse_program() {
    const Token& kw = peek();
    if (kw.kind != Tok::kIdent || kw.text != "program") {
      fail("expected 'program <name>' header");
    }
    next();
    std::string name = expect(Tok::kIdent, "program name").text;
    Block body;
    while (peek().kind != Tok::kEof) body.push_back(statement());
    return {std::move(name), std::move(body)};
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  bool accept(Tok k) {
    if (peek().kind != k) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw SyntaxError(msg, peek().line, peek().col);
  }
  const Token& expect(Tok k, std::string_view what) {
    if (peek().kind != k) {
      fail("expected " + std::string(what) + ", found '" + peek().text + "'");
    }
    return next();
  }
  bool is_keyword(std::string_view kw) const {
    return peek().kind == Tok::kIdent && peek().text == kw;
  }

  Block block() {
    expect(Tok::kLBrace, "'{'");
    Block b;
    while (peek().kind != Tok::kRBrace) {
      if (peek().kind == Tok::kEof) fail("unterminated block");
      b.push_back(statement());
    }
    next();
    return b;
  }

  Stmt statement() {
    Stmt s{};
    s.line = peek().line;
    if (accept(Tok::kAccept)) {
      s.kind = Stmt::Kind::kAccept;
      return s;
    }
    if (is_keyword("var")) {
      next();
      s.kind = Stmt::Kind::kDecl;
      do {
        declared_.insert(expect(Tok::kIdent, "variable name").text);
      } while (accept(Tok::kComma));
      accept(Tok::kSemi);
      return s;
    }
    if (is_keyword("assume")) {
      next();
      expect(Tok::kLParen, "'('");
      s.kind = Stmt::Kind::kAssume;
      s.expr = expr();
      expect(Tok::kRParen, "')'");
      accept(Tok::kSemi);
      return s;
    }
    if (is_keyword("call")) {
      next();
      s.kind = Stmt::Kind::kCall;
      s.name = expect(Tok::kIdent, "method name").text;
      expect(Tok::kLParen, "'('");
      if (peek().kind != Tok::kRParen) {
        do {
          s.args.push_back(expr());
        } while (accept(Tok::kComma));
      }
      expect(Tok::kRParen, "')'");
      accept(Tok::kSemi);
      return s;
    }
    if (is_keyword("if")) {
      next();
      s.kind = Stmt::Kind::kIf;
      expect(Tok::kLParen, "'('");
      ExprPtr c = expr();
      expect(Tok::kRParen, "')'");
      s.arms.emplace_back(c, block());
      while (is_keyword("else")) {
        next();
        if (is_keyword("if")) {
          next();
          expect(Tok::kLParen, "'('");
          ExprPtr ci = expr();
          expect(Tok::kRParen, "')'");
          s.arms.emplace_back(ci, block());
        } else {
          s.else_block = block();
          break;
        }
      }
      return s;
    }
    if (is_keyword("while")) {
      next();
      s.kind = Stmt::Kind::kWhile;
      expect(Tok::kLParen, "'('");
      s.expr = expr();
      expect(Tok::kRParen, "')'");
      s.body = block();
      return s;
    }
    if (peek().kind == Tok::kIdent && toks_[pos_ + 1].kind == Tok::kAssign) {
      s.kind = Stmt::Kind::kAssign;
      s.name = next().text;
      next();
      s.expr = expr();
      declared_.insert(s.name);
      accept(Tok::kSemi);
      return s;
    }
    fail("expected a statement, found '" + peek().text + "'");
  }

  ExprPtr expr() { return or_expr(); }

  ExprPtr or_expr() {
    ExprPtr l = and_expr();
    while (accept(Tok::kOr)) l = Expr::binary(BinOp::kOr, l, and_expr());
    return l;
  }
  ExprPtr and_expr() {
    ExprPtr l = cmp_expr();
    while (accept(Tok::kAnd)) l = Expr::binary(BinOp::kAnd, l, cmp_expr());
    return l;
  }
  ExprPtr cmp_expr() {
    ExprPtr l = add_expr();
    static constexpr std::pair<Tok, BinOp> kOps[] = {
        {Tok::kEq, BinOp::kEq}, {Tok::kNe, BinOp::kNe}, {Tok::kLt, BinOp::kLt},
        {Tok::kLe, BinOp::kLe}, {Tok::kGt, BinOp::kGt}, {Tok::kGe, BinOp::kGe}};
    for (auto [t, op] : kOps) {
      if (accept(t)) return Expr::binary(op, l, add_expr());
    }
    return l;
  }
  ExprPtr add_expr() {
    ExprPtr l = mul_expr();
    for (;;) {
      if (accept(Tok::kPlus)) {
        l = Expr::binary(BinOp::kAdd, l, mul_expr());
      } else if (accept(Tok::kMinus)) {
        l = Expr::binary(BinOp::kSub, l, mul_expr());
      } else {
        return l;
      }
    }
  }
  ExprPtr mul_expr() {
    ExprPtr l = unary();
    while (accept(Tok::kStar)) l = Expr::binary(BinOp::kMul, l, unary());
    return l;
  }
  ExprPtr unary() {
    if (accept(Tok::kNot)) return Expr::unary(ExprKind::kNot, unary());
    if (accept(Tok::kMinus)) return Expr::unary(ExprKind::kNeg, unary());
    return primary();
  }
  ExprPtr primary() {
    const Token& t = peek();
    if (t.kind == Tok::kInt) {
      next();
      return Expr::integer(std::stoll(t.text));
    }
    if (accept(Tok::kLParen)) {
      ExprPtr e = expr();
      expect(Tok::kRParen, "')'");
      return e;
    }
    if (t.kind == Tok::kIdent) {
      if (t.text == "true" || t.text == "false") {
        next();
        return Expr::boolean(t.text == "true");
      }
      if (!declared_.count(t.text)) {
        throw UndeclaredVariable(std::to_string(t.line) + ":" +
                                 std::to_string(t.col) +
                                 ": undeclared variable '" + t.text + "'");
      }
      next();
      return Expr::variable(t.text);
    }
    fail("expected an expression, found '" + t.text + "'");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::set<std::string> declared_;
};

class Lowering {
 public:
  explicit Lowering(Cfg& g) : g_(g) {}

  void lower_program(const Block& body) {
    lower_block(body, Cfg::kInitial, Cfg::kTerminal);
    if (g_.accept_points.empty()) {
      g_.accept_points.push_back({Cfg::kTerminal, "end"});
    }
  }

 private:
  Location fresh() { return static_cast<Location>(g_.num_locations++); }

  void add(Location from, Operation op, Location to) {
    g_.edges.push_back({from, std::move(op), to});
  }

  // Statements that produce no edge.
  static bool is_marker(const Stmt& s) {
    return s.kind == Stmt::Kind::kAccept || s.kind == Stmt::Kind::kDecl;
  }

  void mark(const Stmt& s, Location l) {
    if (s.kind != Stmt::Kind::kAccept) return;
    g_.accept_points.push_back({l, "line:" + std::to_string(s.line)});
  }

  // Lowers `b` so that control flows from `from` to `to`.
  void lower_block(const Block& b, Location from, Location to) {
    std::size_t last = b.size();
    for (std::size_t i = b.size(); i-- > 0;) {
      if (!is_marker(b[i])) {
        last = i;
        break;
      }
    }
    if (last == b.size()) {
      // No executable statement: connect with a trivially true assume.
      for (const Stmt& s : b) mark(s, to);
      if (from != to) add(from, AssumeOp{Expr::boolean(true)}, to);
      return;
    }
    Location cur = from;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const Stmt& s = b[i];
      if (is_marker(s)) {
        mark(s, i > last ? to : cur);
        continue;
      }
      Location target = i == last ? to : fresh();
      lower_stmt(s, cur, target);
      cur = target;
    }
  }

  void lower_stmt(const Stmt& s, Location from, Location to) {
    switch (s.kind) {
      case Stmt::Kind::kAssign:
        add(from, AssignOp{s.name, s.expr}, to);
        return;
      case Stmt::Kind::kAssume:
        add(from, AssumeOp{s.expr}, to);
        return;
      case Stmt::Kind::kCall:
        add(from, CallOp{s.name, s.args}, to);
        return;
      case Stmt::Kind::kIf: {
        // Guards: arm i is "not any earlier guard, and guard i".
        ExprPtr none_before = Expr::boolean(true);
        auto conj = [](ExprPtr a, ExprPtr b) {
          if (a->kind == ExprKind::kBool && a->bval) return b;
          return Expr::binary(BinOp::kAnd, std::move(a), std::move(b));
        };
        auto lower_arm = [&](ExprPtr guard, const Block& body) {
          if (std::all_of(body.begin(), body.end(), is_marker)) {
            add(from, AssumeOp{guard}, to);
            for (const Stmt& m : body) mark(m, to);
            return;
          }
          Location entry = fresh();
          add(from, AssumeOp{guard}, entry);
          lower_block(body, entry, to);
        };
        for (const auto& [cond, body] : s.arms) {
          lower_arm(conj(none_before, cond), body);
          none_before = conj(none_before, Expr::unary(ExprKind::kNot, cond));
        }
        lower_arm(none_before, s.else_block ? *s.else_block : Block{});
        return;
      }
      case Stmt::Kind::kWhile: {
        Location head = from;
        if (head == Cfg::kInitial) {
          head = fresh();
          add(from, AssumeOp{Expr::boolean(true)}, head);
        }
        g_.loop_heads.insert(head);
        if (std::all_of(s.body.begin(), s.body.end(), is_marker)) {
          add(head, AssumeOp{s.expr}, head);
          for (const Stmt& m : s.body) mark(m, head);
        } else {
          Location entry = fresh();
          add(head, AssumeOp{s.expr}, entry);
          lower_block(s.body, entry, head);
        }
        add(head, AssumeOp{Expr::unary(ExprKind::kNot, s.expr)}, to);
        return;
      }
      case Stmt::Kind::kAccept:
      case Stmt::Kind::kDecl:
        return;
    }
  }

  Cfg& g_;
};

}  // namespace detail

/// Parses DSL text into a CFG. Throws SyntaxError (with line:column) or
/// UndeclaredVariable.
inline Cfg parse_program(std::string_view text) {
  detail::Parser p(text);
  auto [name, body] = p.parse_program();
  Cfg g;
  g.name = std::move(name);
  detail::Lowering(g).lower_program(body);
  return g;
}

// ---------------------------------------------------------------------------
// Symbolic execution

struct SymState {
  Location location = Cfg::kInitial;
  Store store;
  std::map<Location, int> unroll_counts;  // loop heads only
};

namespace detail {

struct StateKey {
  Location location;
  std::vector<std::pair<std::string, std::string>> store;
  std::vector<std::pair<Location, int>> counts;

  auto operator<=>(const StateKey&) const = default;
};

inline StateKey key_of(const SymState& s) {
  StateKey k{s.location, {}, {s.unroll_counts.begin(), s.unroll_counts.end()}};
  for (const auto& [v, e] : s.store) k.store.emplace_back(v, to_string(*e));
  return k;
}

}  // namespace detail

struct SymexecOptions {
  int unroll_bound = 3;
};

/// Compiles `g` into an automaton whose accepting states are all symbolic
/// states at `accept_at`. States are numbered in breadth-first discovery
/// order. Loop heads whose visit count would exceed the unroll bound are
/// pruned; a state left without successors anywhere other than the terminal
/// location is dead, is removed, and its siblings in the enclosing assume fan
/// are renormalized.
inline Automaton symbolic_execute(const Cfg& g, const Alphabet& alphabet,
                                  Location accept_at,
                                  const SymexecOptions& opts = {}) {
  if (opts.unroll_bound <= 0) throw UnrollBoundZero("unroll bound must be >= 1");
  if (accept_at >= g.num_locations) {
    throw NoAcceptingState("accept location out of range");
  }

  std::vector<std::vector<std::size_t>> out_edges(g.num_locations);
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    out_edges[g.edges[i].from].push_back(i);
  }

  struct RawTransition {
    std::size_t from;
    Symbol symbol;
    std::size_t to;
  };
  std::vector<SymState> states;
  std::map<detail::StateKey, std::size_t> index;
  std::vector<std::vector<RawTransition>> succ;
  // Each state's outgoing transitions form either a single edge or a fan.
  std::vector<bool> is_fan;

  auto intern = [&](SymState s) -> std::size_t {
    auto key = detail::key_of(s);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    std::size_t id = states.size();
    index.emplace(std::move(key), id);
    states.push_back(std::move(s));
    succ.emplace_back();
    is_fan.push_back(false);
    return id;
  };

  // Successor at `to`; nullopt when the unroll bound prunes it.
  auto step_to = [&](const SymState& s, Location to,
                     Store store) -> std::optional<SymState> {
    SymState n{to, std::move(store), s.unroll_counts};
    if (g.loop_heads.count(to)) {
      if (++n.unroll_counts[to] > opts.unroll_bound) return std::nullopt;
    }
    return n;
  };

  intern(SymState{});
  for (std::size_t cur = 0; cur < states.size(); ++cur) {
    const SymState s = states[cur];
    const auto& edges = out_edges[s.location];
    if (edges.empty()) continue;
    const Edge& first = g.edges[edges.front()];
    if (std::holds_alternative<AssumeOp>(first.op)) {
      is_fan[cur] = true;
      std::vector<SymState> feasible;
      for (std::size_t ei : edges) {
        const Edge& e = g.edges[ei];
        const auto& cond = std::get<AssumeOp>(e.op).cond;
        if (feasibility(cond, s.store) == Feasibility::kFalseOnly) continue;
        if (auto n = step_to(s, e.to, s.store)) feasible.push_back(std::move(*n));
      }
      for (auto& n : feasible) {
        std::size_t id = intern(std::move(n));
        succ[cur].push_back({cur, kEpsilon, id});
      }
      continue;
    }
    if (auto* a = std::get_if<AssignOp>(&first.op)) {
      Store st = s.store;
      st[a->var] = fold(a->value, s.store);
      if (auto n = step_to(s, first.to, std::move(st))) {
        std::size_t id = intern(std::move(*n));
        succ[cur].push_back({cur, kEpsilon, id});
      }
      continue;
    }
    const auto& c = std::get<CallOp>(first.op);
    Symbol sym = alphabet.find(c.method).value_or(kEpsilon);
    if (auto n = step_to(s, first.to, s.store)) {
      std::size_t id = intern(std::move(*n));
      succ[cur].push_back({cur, sym, id});
    }
  }

  // Dead-state elimination to a fixed point.
  const std::size_t n = states.size();
  std::vector<bool> alive(n, true);
  auto is_dead = [&](std::size_t q) {
    if (states[q].location == accept_at) return false;
    if (states[q].location == Cfg::kTerminal) return false;
    for (const auto& t : succ[q]) {
      if (alive[t.to]) return false;
    }
    return true;
  };
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t q = n; q-- > 0;) {
      if (alive[q] && is_dead(q)) {
        alive[q] = false;
        changed = true;
      }
    }
  }
  if (!alive[0]) throw NoAcceptingState("every path is infeasible");

  std::vector<StateId> renumber(n, 0);
  std::size_t kept = 0;
  for (std::size_t q = 0; q < n; ++q) {
    if (alive[q]) renumber[q] = static_cast<StateId>(kept++);
  }
  std::vector<Transition> transitions;
  std::vector<StateId> accepting;
  for (std::size_t q = 0; q < n; ++q) {
    if (!alive[q]) continue;
    if (states[q].location == accept_at) accepting.push_back(renumber[q]);
    std::size_t live = 0;
    for (const auto& t : succ[q]) live += alive[t.to] ? 1 : 0;
    for (const auto& t : succ[q]) {
      if (!alive[t.to]) continue;
      transitions.push_back({renumber[q], t.symbol,
                             is_fan[q] ? 1.0 / static_cast<double>(live) : 1.0,
                             renumber[t.to]});
    }
  }
  if (accepting.empty()) {
    throw NoAcceptingState("accept location is unreachable");
  }
  return Automaton(alphabet, kept, 0, std::move(accepting),
                   std::move(transitions));
}

/// Convenience: all call targets appearing in a CFG, sorted.
inline std::vector<std::string> call_targets(const Cfg& g) {
  std::set<std::string> names;
  for (const Edge& e : g.edges) {
    if (auto* c = std::get_if<CallOp>(&e.op)) names.insert(c->method);
  }
  return {names.begin(), names.end()};
}

}  // namespace bayesspec::symexec
