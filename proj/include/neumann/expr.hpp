#ifndef NEUMANN_EXPR_HPP
#define NEUMANN_EXPR_HPP

// Scalar expressions for Hamiltonians, retardations, parallel factors and
// kernels. Grammar (precedence low to high):
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?          (right associative)
//   primary := number | constant | symbol | function '(' expr ')' | '(' expr ')'
//
// constants: pi, e
// functions: sin cos exp log sqrt tanh smoothabs
// symbols per slot:
//   Hamiltonian     q1..qn p1..pn t
//   Retardation     q1..qn p1..pn
//   ParallelFactor  h      (the value of H the factor is applied to)
//   Kernel          tau
//
// smoothabs(x) = sqrt(x^2 + eps^2), eps configured at parse time.

#include "neumann/types.hpp"

#include <charconv>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neumann {

enum class Slot { Hamiltonian, Retardation, ParallelFactor, Kernel };

inline const char* slot_name(Slot s) {
  switch (s) {
    case Slot::Hamiltonian: return "Hamiltonian";
    case Slot::Retardation: return "Retardation";
    case Slot::ParallelFactor: return "ParallelFactor";
    case Slot::Kernel: return "Kernel";
  }
  return "?";
}

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t offset, Slot slot)
      : std::runtime_error(std::string(slot_name(slot)) + " expression: " + msg + " at byte " +
                           std::to_string(offset)),
        offset_(offset),
        slot_(slot),
        message_(msg) {}
  std::size_t offset() const { return offset_; }
  Slot slot() const { return slot_; }
  const std::string& message() const { return message_; }

 private:
  std::size_t offset_;
  Slot slot_;
  std::string message_;
};

// Domain error during evaluation (log/sqrt of a negative, division by zero, ...).
class EvalError : public std::runtime_error {
 public:
  EvalError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (node at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr int kMaxVars = 13;
using JetVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxVars, 1>;
using JetMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxVars, kMaxVars>;

// Value with exact first and (optionally) second derivatives.
struct Jet {
  double value = 0.0;
  JetVec gradient;
  JetMat hessian;  // empty unless order 2 was requested
};

struct ParseOptions {
  int dim_half = 1;
  double smoothabs_eps = 1e-3;
};

namespace detail {

enum class Fn { Sin, Cos, Exp, Log, Sqrt, Tanh, SmoothAbs };

inline const char* fn_name(Fn f) {
  switch (f) {
    case Fn::Sin: return "sin";
    case Fn::Cos: return "cos";
    case Fn::Exp: return "exp";
    case Fn::Log: return "log";
    case Fn::Sqrt: return "sqrt";
    case Fn::Tanh: return "tanh";
    case Fn::SmoothAbs: return "smoothabs";
  }
  return "?";
}

struct Node {
  enum class Kind { Number, Constant, Variable, Negate, Add, Sub, Mul, Div, Pow, Call };
  Kind kind = Kind::Number;
  double value = 0.0;
  int index = -1;
  Fn fn = Fn::Sin;
  std::string name;
  std::size_t offset = 0;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
};

using NodePtr = std::shared_ptr<const Node>;

inline bool node_depends_on(const Node& n, int var) {
  if (n.kind == Node::Kind::Variable) return n.index == var;
  bool d = false;
  if (n.lhs) d = d || node_depends_on(*n.lhs, var);
  if (n.rhs) d = d || node_depends_on(*n.rhs, var);
  return d;
}

inline bool node_is_constant(const Node& n) {
  if (n.kind == Node::Kind::Variable) return false;
  bool c = true;
  if (n.lhs) c = c && node_is_constant(*n.lhs);
  if (n.rhs) c = c && node_is_constant(*n.rhs);
  return c;
}

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void print_node(const Node& n, std::string& out) {
  using K = Node::Kind;
  switch (n.kind) {
    case K::Number: out += format_number(n.value); return;
    case K::Constant:
    case K::Variable: out += n.name; return;
    case K::Negate:
      out += "(-";
      print_node(*n.lhs, out);
      out += ")";
      return;
    case K::Call:
      out += fn_name(n.fn);
      out += "(";
      print_node(*n.lhs, out);
      out += ")";
      return;
    default: break;
  }
  const char* op = n.kind == K::Add ? " + " : n.kind == K::Sub ? " - " : n.kind == K::Mul ? " * "
                   : n.kind == K::Div ? " / " : " ^ ";
  out += "(";
  print_node(*n.lhs, out);
  out += op;
  print_node(*n.rhs, out);
  out += ")";
}

// Scalar function with its first two derivatives at x; throws on domain errors.
inline void fn_derivs(Fn fn, double x, double eps, int order, std::size_t offset, double& f0,
                      double& f1, double& f2) {
  f1 = f2 = 0.0;
  switch (fn) {
    case Fn::Sin:
      f0 = std::sin(x);
      if (order > 0) f1 = std::cos(x);
      f2 = -f0;
      break;
    case Fn::Cos:
      f0 = std::cos(x);
      if (order > 0) f1 = -std::sin(x);
      f2 = -f0;
      break;
    case Fn::Exp:
      f0 = std::exp(x);
      f1 = f2 = f0;
      break;
    case Fn::Log:
      if (!(x > 0.0)) throw EvalError("log of non-positive value", offset);
      f0 = std::log(x);
      f1 = 1.0 / x;
      f2 = -f1 * f1;
      break;
    case Fn::Sqrt:
      if (x < 0.0) throw EvalError("sqrt of negative value", offset);
      f0 = std::sqrt(x);
      if (order > 0) {
        if (x == 0.0) throw EvalError("sqrt not differentiable at 0", offset);
        f1 = 0.5 / f0;
        f2 = -0.25 / (f0 * x);
      }
      break;
    case Fn::Tanh: {
      f0 = std::tanh(x);
      const double s = 1.0 - f0 * f0;
      f1 = s;
      f2 = -2.0 * f0 * s;
      break;
    }
    case Fn::SmoothAbs: {
      f0 = std::sqrt(x * x + eps * eps);
      f1 = x / f0;
      f2 = eps * eps / (f0 * f0 * f0);
      break;
    }
  }
}

inline void pow_derivs(double x, double c, std::size_t offset, double& f0, double& f1, double& f2) {
  const bool integral = c == std::floor(c);
  if (x < 0.0 && !integral) throw EvalError("negative base with non-integer exponent", offset);
  f0 = std::pow(x, c);
  f1 = c == 0.0 ? 0.0 : c * std::pow(x, c - 1.0);
  f2 = (c == 0.0 || c == 1.0) ? 0.0 : c * (c - 1.0) * std::pow(x, c - 2.0);
}

class Evaluator {
 public:
  Evaluator(std::span<const double> point, double eps, int order)
      : point_(point), eps_(eps), order_(order), n_(static_cast<int>(point.size())) {}

  double value(const Node& n) const {
    using K = Node::Kind;
    switch (n.kind) {
      case K::Number:
      case K::Constant: return n.value;
      case K::Variable: return point_[n.index];
      case K::Negate: return -value(*n.lhs);
      case K::Add: return value(*n.lhs) + value(*n.rhs);
      case K::Sub: return value(*n.lhs) - value(*n.rhs);
      case K::Mul: return value(*n.lhs) * value(*n.rhs);
      case K::Div: {
        const double d = value(*n.rhs);
        if (d == 0.0) throw EvalError("division by zero", n.offset);
        return value(*n.lhs) / d;
      }
      case K::Pow: {
        const double b = value(*n.lhs);
        const double c = value(*n.rhs);
        if (node_is_constant(*n.rhs)) {
          double f0, f1, f2;
          pow_derivs(b, c, n.offset, f0, f1, f2);
          if (!std::isfinite(f0)) throw EvalError("non-finite power", n.offset);
          return f0;
        }
        if (!(b > 0.0)) throw EvalError("non-positive base with variable exponent", n.offset);
        return std::exp(c * std::log(b));
      }
      case K::Call: {
        double f0, f1, f2;
        fn_derivs(n.fn, value(*n.lhs), eps_, 0, n.offset, f0, f1, f2);
        return f0;
      }
    }
    return 0.0;
  }

  Jet jet(const Node& n) const {
    using K = Node::Kind;
    Jet r = zero();
    switch (n.kind) {
      case K::Number:
      case K::Constant: r.value = n.value; return r;
      case K::Variable:
        r.value = point_[n.index];
        r.gradient[n.index] = 1.0;
        return r;
      case K::Negate: {
        Jet a = jet(*n.lhs);
        a.value = -a.value;
        a.gradient = -a.gradient;
        if (order_ > 1) a.hessian = -a.hessian;
        return a;
      }
      case K::Add:
      case K::Sub: {
        const double s = n.kind == K::Add ? 1.0 : -1.0;
        Jet a = jet(*n.lhs);
        const Jet b = jet(*n.rhs);
        a.value += s * b.value;
        a.gradient += s * b.gradient;
        if (order_ > 1) a.hessian += s * b.hessian;
        return a;
      }
      case K::Mul: return mul(jet(*n.lhs), jet(*n.rhs));
      case K::Div: {
        const Jet b = jet(*n.rhs);
        if (b.value == 0.0) throw EvalError("division by zero", n.offset);
        const double x = b.value;
        return mul(jet(*n.lhs), chain(b, 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)));
      }
      case K::Pow: {
        const Jet a = jet(*n.lhs);
        if (node_is_constant(*n.rhs)) {
          double f0, f1, f2;
          pow_derivs(a.value, value(*n.rhs), n.offset, f0, f1, f2);
          if (!std::isfinite(f0) || !std::isfinite(f1) || (order_ > 1 && !std::isfinite(f2)))
            throw EvalError("non-finite power derivative", n.offset);
          return chain(a, f0, f1, f2);
        }
        if (!(a.value > 0.0)) throw EvalError("non-positive base with variable exponent", n.offset);
        const double x = a.value;
        const Jet la = chain(a, std::log(x), 1.0 / x, -1.0 / (x * x));
        const Jet p = mul(la, jet(*n.rhs));
        const double ex = std::exp(p.value);
        return chain(p, ex, ex, ex);
      }
      case K::Call: {
        const Jet a = jet(*n.lhs);
        double f0, f1, f2;
        fn_derivs(n.fn, a.value, eps_, order_, n.offset, f0, f1, f2);
        return chain(a, f0, f1, f2);
      }
    }
    return r;
  }

 private:
  Jet zero() const {
    Jet r;
    r.gradient = JetVec::Zero(n_);
    if (order_ > 1) r.hessian = JetMat::Zero(n_, n_);
    return r;
  }

  Jet mul(const Jet& a, const Jet& b) const {
    Jet r;
    r.value = a.value * b.value;
    r.gradient = a.gradient * b.value + b.gradient * a.value;
    if (order_ > 1) {
      r.hessian = a.hessian * b.value + b.hessian * a.value + a.gradient * b.gradient.transpose() +
                  b.gradient * a.gradient.transpose();
    }
    return r;
  }

  Jet chain(const Jet& a, double f0, double f1, double f2) const {
    Jet r;
    r.value = f0;
    r.gradient = f1 * a.gradient;
    if (order_ > 1) r.hessian = f1 * a.hessian + f2 * a.gradient * a.gradient.transpose();
    return r;
  }

  std::span<const double> point_;
  double eps_;
  int order_;
  int n_;
};

class Parser {
 public:
  Parser(std::string_view src, Slot slot, const ParseOptions& opts)
      : src_(src), slot_(slot), opts_(opts) {}

  NodePtr parse() {
    skip_ws();
    if (pos_ >= src_.size()) fail("empty expression");
    NodePtr n = expr();
    skip_ws();
    if (pos_ < src_.size()) fail(std::string("unexpected '") + src_[pos_] + "'");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_, slot_); }
  [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const {
    throw ParseError(msg, at, slot_);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static NodePtr make(Node::Kind k, std::size_t off, NodePtr l = nullptr, NodePtr r = nullptr) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->offset = off;
    n->lhs = std::move(l);
    n->rhs = std::move(r);
    return n;
  }

  NodePtr expr() {
    NodePtr l = term();
    for (;;) {
      skip_ws();
      const std::size_t off = pos_;
      if (accept('+')) l = make(Node::Kind::Add, off, l, term());
      else if (accept('-')) l = make(Node::Kind::Sub, off, l, term());
      else return l;
    }
  }

  NodePtr term() {
    NodePtr l = unary();
    for (;;) {
      skip_ws();
      const std::size_t off = pos_;
      if (accept('*')) l = make(Node::Kind::Mul, off, l, unary());
      else if (accept('/')) l = make(Node::Kind::Div, off, l, unary());
      else return l;
    }
  }

  NodePtr unary() {
    skip_ws();
    const std::size_t off = pos_;
    if (accept('-')) return make(Node::Kind::Negate, off, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    skip_ws();
    const std::size_t off = pos_;
    if (accept('^')) return make(Node::Kind::Pow, off, base, unary());
    return base;
  }

  NodePtr primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    const std::size_t off = pos_;
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr n = expr();
      if (!accept(')')) fail("expected ')'");
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_'))
        ++end;
      const std::string name(src_.substr(pos_, end - pos_));
      pos_ = end;
      return identifier(name, off);
    }
    fail(std::string("unexpected '") + c + "'");
  }

  NodePtr number() {
    const std::size_t off = pos_;
    std::size_t end = pos_;
    while (end < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[end])) || src_[end] == '.'))
      ++end;
    if (end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      std::size_t k = end + 1;
      if (k < src_.size() && (src_[k] == '+' || src_[k] == '-')) ++k;
      if (k < src_.size() && std::isdigit(static_cast<unsigned char>(src_[k]))) {
        end = k;
        while (end < src_.size() && std::isdigit(static_cast<unsigned char>(src_[end]))) ++end;
      }
    }
    double v = 0.0;
    auto res = std::from_chars(src_.data() + pos_, src_.data() + end, v);
    if (res.ec != std::errc() || res.ptr != src_.data() + end) fail_at("malformed number", off);
    pos_ = end;
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Number;
    n->value = v;
    n->offset = off;
    return n;
  }

  NodePtr identifier(const std::string& name, std::size_t off) {
    static const std::pair<const char*, Fn> fns[] = {
        {"sin", Fn::Sin},   {"cos", Fn::Cos},   {"exp", Fn::Exp},           {"log", Fn::Log},
        {"sqrt", Fn::Sqrt}, {"tanh", Fn::Tanh}, {"smoothabs", Fn::SmoothAbs}};
    for (const auto& [fname, fn] : fns) {
      if (name == fname) {
        if (!accept('(')) fail("expected '(' after function " + name);
        NodePtr arg = expr();
        if (!accept(')')) fail("expected ')'");
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Call;
        n->fn = fn;
        n->offset = off;
        n->lhs = std::move(arg);
        return n;
      }
    }
    if (name == "pi" || name == "e") {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::Constant;
      n->value = name == "pi" ? std::numbers::pi : std::numbers::e;
      n->name = name;
      n->offset = off;
      return n;
    }
    const int idx = variable_index(name, off);
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Variable;
    n->index = idx;
    n->name = name;
    n->offset = off;
    return n;
  }

  int variable_index(const std::string& name, std::size_t off) const {
    const int dh = opts_.dim_half;
    int coord = -1;
    if (name.size() >= 2 && (name[0] == 'q' || name[0] == 'p')) {
      int k = 0;
      auto res = std::from_chars(name.data() + 1, name.data() + name.size(), k);
      if (res.ec == std::errc() && res.ptr == name.data() + name.size() && k >= 1) {
        if (k > dh) fail_at("symbol '" + name + "' exceeds dim_half=" + std::to_string(dh), off);
        coord = (name[0] == 'q' ? 0 : dh) + (k - 1);
      }
    }
    const bool known = coord >= 0 || name == "t" || name == "tau" || name == "h";
    if (!known) fail_at("unknown symbol '" + name + "'", off);
    switch (slot_) {
      case Slot::Hamiltonian:
        if (coord >= 0) return coord;
        if (name == "t") return 2 * dh;
        break;
      case Slot::Retardation:
        if (coord >= 0) return coord;
        break;
      case Slot::ParallelFactor:
        if (name == "h") return 0;
        break;
      case Slot::Kernel:
        if (name == "tau") return 0;
        break;
    }
    fail_at("symbol not allowed in slot: '" + name + "'", off);
  }

  std::string_view src_;
  Slot slot_;
  ParseOptions opts_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Immutable parsed expression bound to a slot.
class Expression {
 public:
  Expression() = default;

  Slot slot() const { return slot_; }
  int dim_half() const { return dim_half_; }
  double smoothabs_eps() const { return eps_; }
  const std::string& source() const { return source_; }

  // Number of declared variables: 2n+1 (H), 2n (F), 1 (f, beta).
  int arity() const {
    switch (slot_) {
      case Slot::Hamiltonian: return 2 * dim_half_ + 1;
      case Slot::Retardation: return 2 * dim_half_;
      default: return 1;
    }
  }

  std::vector<std::string> variables() const {
    std::vector<std::string> v;
    switch (slot_) {
      case Slot::Hamiltonian:
      case Slot::Retardation:
        for (int i = 1; i <= dim_half_; ++i) v.push_back("q" + std::to_string(i));
        for (int i = 1; i <= dim_half_; ++i) v.push_back("p" + std::to_string(i));
        if (slot_ == Slot::Hamiltonian) v.push_back("t");
        break;
      case Slot::ParallelFactor: v.push_back("h"); break;
      case Slot::Kernel: v.push_back("tau"); break;
    }
    return v;
  }

  bool depends_on(int var) const { return root_ && detail::node_depends_on(*root_, var); }

  // Canonical fully parenthesized form; parse(to_string()) reproduces it.
  std::string to_string() const {
    std::string out;
    if (root_) detail::print_node(*root_, out);
    return out;
  }

  double eval(std::span<const double> point) const {
    check_arity(point);
    return detail::Evaluator(point, eps_, 0).value(*root_);
  }

  // order 0: value only; 1: + gradient; 2: + hessian. Gradient ordered as variables().
  Jet eval_jet(std::span<const double> point, int order) const {
    check_arity(point);
    if (order < 0 || order > 2) throw std::invalid_argument("eval_jet order must be 0, 1 or 2");
    if (order == 0) {
      Jet j;
      j.value = eval(point);
      return j;
    }
    return detail::Evaluator(point, eps_, order).jet(*root_);
  }

  friend Expression parse(std::string_view source, Slot slot, const ParseOptions& opts);

 private:
  void check_arity(std::span<const double> point) const {
    if (!root_) throw std::logic_error("evaluating an empty expression");
    if (static_cast<int>(point.size()) != arity())
      throw std::invalid_argument("expression expects " + std::to_string(arity()) + " values, got " +
                                  std::to_string(point.size()));
  }

  detail::NodePtr root_;
  Slot slot_ = Slot::Hamiltonian;
  int dim_half_ = 1;
  double eps_ = 1e-3;
  std::string source_;
};

inline Expression parse(std::string_view source, Slot slot, const ParseOptions& opts = {}) {
  if (opts.dim_half < 1 || 2 * opts.dim_half + 1 > kMaxVars)
    throw std::invalid_argument("dim_half must be in [1, " + std::to_string((kMaxVars - 1) / 2) + "]");
  if (!(opts.smoothabs_eps > 0.0)) throw std::invalid_argument("smoothabs eps must be positive");
  Expression e;
  e.root_ = detail::Parser(source, slot, opts).parse();
  e.slot_ = slot;
  e.dim_half_ = opts.dim_half;
  e.eps_ = opts.smoothabs_eps;
  e.source_ = std::string(source);
  return e;
}

}  // namespace neumann

#endif
