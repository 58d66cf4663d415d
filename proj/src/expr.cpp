#include "symgpt/expr.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace symgpt {

int Op::arity() const {
  switch (kind) {
    case OpKind::Id:
    case OpKind::Sin:
    case OpKind::Cos:
    case OpKind::Sqrt:
    case OpKind::Exp:
    case OpKind::Log:
      return 1;
    default:
      return 2;
  }
}

const char* Op::name() const {
  switch (kind) {
    case OpKind::Id: return "id";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Sin: return "sin";
    case OpKind::Pow: return "pow";
    case OpKind::Cos: return "cos";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Exp: return "exp";
    case OpKind::Div: return "div";
    case OpKind::Sub: return "sub";
    case OpKind::Log: return "log";
  }
  return "?";
}

char Op::infix_symbol() const {
  switch (kind) {
    case OpKind::Add: return '+';
    case OpKind::Sub: return '-';
    case OpKind::Mul: return '*';
    case OpKind::Div: return '/';
    case OpKind::Pow: return '^';
    default: return '?';
  }
}

const std::vector<Op>& Op::all() {
  static const std::vector<Op> ops = {
      {OpKind::Id},  {OpKind::Add}, {OpKind::Mul}, {OpKind::Sin},
      {OpKind::Pow}, {OpKind::Cos}, {OpKind::Sqrt}, {OpKind::Exp},
      {OpKind::Div}, {OpKind::Sub}, {OpKind::Log}};
  return ops;
}

Expr::Ptr Expr::variable(int index) {
  if (index < 1) throw std::invalid_argument("variable index must be >= 1");
  auto e = std::shared_ptr<Expr>(new Expr());
  e->kind_ = Kind::Variable;
  e->var_index_ = index;
  return e;
}

Expr::Ptr Expr::constant(double value) {
  auto e = std::shared_ptr<Expr>(new Expr());
  e->kind_ = Kind::Constant;
  e->value_ = value;
  return e;
}

Expr::Ptr Expr::placeholder() {
  auto e = std::shared_ptr<Expr>(new Expr());
  e->kind_ = Kind::Placeholder;
  return e;
}

Expr::Ptr Expr::apply(Op op, Ptr a) {
  if (op.arity() != 1) throw std::invalid_argument("unary apply on binary op");
  auto e = std::shared_ptr<Expr>(new Expr());
  e->kind_ = Kind::Apply;
  e->op_ = op;
  e->children_ = {std::move(a)};
  return e;
}

Expr::Ptr Expr::apply(Op op, Ptr a, Ptr b) {
  if (op.arity() != 2) throw std::invalid_argument("binary apply on unary op");
  auto e = std::shared_ptr<Expr>(new Expr());
  e->kind_ = Kind::Apply;
  e->op_ = op;
  e->children_ = {std::move(a), std::move(b)};
  return e;
}

int node_count(const Expr& e) {
  int n = 1;
  for (int i = 0; i < e.num_children(); ++i) n += node_count(*e.child(i));
  return n;
}

int tree_depth(const Expr& e) {
  int d = 0;
  for (int i = 0; i < e.num_children(); ++i) d = std::max(d, tree_depth(*e.child(i)));
  return d + 1;
}

int placeholder_count(const Expr& e) {
  if (e.kind() == Expr::Kind::Placeholder) return 1;
  int n = 0;
  for (int i = 0; i < e.num_children(); ++i) n += placeholder_count(*e.child(i));
  return n;
}

int constant_count(const Expr& e) {
  if (e.kind() == Expr::Kind::Constant) return 1;
  int n = 0;
  for (int i = 0; i < e.num_children(); ++i) n += constant_count(*e.child(i));
  return n;
}

int max_var_index(const Expr& e) {
  if (e.kind() == Expr::Kind::Variable) return e.var_index();
  int m = 0;
  for (int i = 0; i < e.num_children(); ++i) m = std::max(m, max_var_index(*e.child(i)));
  return m;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case Expr::Kind::Variable: return a.var_index() == b.var_index();
    case Expr::Kind::Constant: return a.value() == b.value();
    case Expr::Kind::Placeholder: return true;
    case Expr::Kind::Apply: {
      if (!(a.op() == b.op())) return false;
      for (int i = 0; i < a.num_children(); ++i)
        if (!structurally_equal(*a.child(i), *b.child(i))) return false;
      return true;
    }
  }
  return false;
}

Expr::Ptr collapse_id(const Expr::Ptr& e) {
  if (e->kind() != Expr::Kind::Apply) return e;
  if (e->op().kind == OpKind::Id) return collapse_id(e->child(0));
  if (e->num_children() == 1) return Expr::apply(e->op(), collapse_id(e->child(0)));
  return Expr::apply(e->op(), collapse_id(e->child(0)), collapse_id(e->child(1)));
}

Expr::Ptr skeletonize(const Expr::Ptr& e) {
  switch (e->kind()) {
    case Expr::Kind::Constant: return Expr::placeholder();
    case Expr::Kind::Apply:
      if (e->num_children() == 1) return Expr::apply(e->op(), skeletonize(e->child(0)));
      return Expr::apply(e->op(), skeletonize(e->child(0)), skeletonize(e->child(1)));
    default:
      return e;
  }
}

namespace {

Expr::Ptr substitute_rec(const Expr::Ptr& e, std::span<const double> c, int& slot) {
  switch (e->kind()) {
    case Expr::Kind::Placeholder:
      if (slot >= static_cast<int>(c.size()))
        throw std::invalid_argument("substitute_placeholders: too few constants");
      return Expr::constant(c[slot++]);
    case Expr::Kind::Apply: {
      auto a = substitute_rec(e->child(0), c, slot);
      if (e->num_children() == 1) return Expr::apply(e->op(), std::move(a));
      auto b = substitute_rec(e->child(1), c, slot);
      return Expr::apply(e->op(), std::move(a), std::move(b));
    }
    default:
      return e;
  }
}

inline std::optional<double> apply_op(OpKind k, double a, double b) {
  double r = 0.0;
  switch (k) {
    case OpKind::Id: r = a; break;
    case OpKind::Add: r = a + b; break;
    case OpKind::Sub: r = a - b; break;
    case OpKind::Mul: r = a * b; break;
    case OpKind::Div:
      if (b == 0.0) return std::nullopt;
      r = a / b;
      break;
    case OpKind::Pow: r = std::pow(a, b); break;
    case OpKind::Sin: r = std::sin(a); break;
    case OpKind::Cos: r = std::cos(a); break;
    case OpKind::Sqrt:
      if (a < 0.0) return std::nullopt;
      r = std::sqrt(a);
      break;
    case OpKind::Exp: r = std::exp(a); break;
    case OpKind::Log:
      if (a <= 0.0) return std::nullopt;
      r = std::log(a);
      break;
  }
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

std::optional<double> eval_rec(const Expr& e, std::span<const double> x,
                               std::span<const double> constants, int& slot) {
  switch (e.kind()) {
    case Expr::Kind::Variable: {
      const int i = e.var_index();
      if (i < 1 || i > static_cast<int>(x.size())) return std::nullopt;
      const double v = x[i - 1];
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    }
    case Expr::Kind::Constant:
      if (!std::isfinite(e.value())) return std::nullopt;
      return e.value();
    case Expr::Kind::Placeholder: {
      if (slot >= static_cast<int>(constants.size())) return std::nullopt;
      const double v = constants[slot++];
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    }
    case Expr::Kind::Apply: {
      auto a = eval_rec(*e.child(0), x, constants, slot);
      if (!a) return std::nullopt;
      double b = 0.0;
      if (e.num_children() == 2) {
        auto bv = eval_rec(*e.child(1), x, constants, slot);
        if (!bv) return std::nullopt;
        b = *bv;
      }
      return apply_op(e.op().kind, *a, b);
    }
  }
  return std::nullopt;
}

}  // namespace

Expr::Ptr substitute_placeholders(const Expr::Ptr& e, std::span<const double> constants) {
  int slot = 0;
  auto out = substitute_rec(e, constants, slot);
  if (slot != static_cast<int>(constants.size()))
    throw std::invalid_argument("substitute_placeholders: too many constants");
  return out;
}

std::optional<double> evaluate(const Expr& e, std::span<const double> x) {
  int slot = 0;
  return eval_rec(e, x, {}, slot);
}

std::optional<double> evaluate(const Expr& e, std::span<const double> x,
                               std::span<const double> constants) {
  int slot = 0;
  auto v = eval_rec(e, x, constants, slot);
  if (v && slot != static_cast<int>(constants.size())) return std::nullopt;
  return v;
}

std::string format_constant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  std::string s(buf);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

namespace {

void render(const Expr& e, int digits, std::string& out) {
  switch (e.kind()) {
    case Expr::Kind::Variable:
      out += 'x';
      out += std::to_string(e.var_index());
      return;
    case Expr::Kind::Constant:
      out += format_constant(e.value(), digits);
      return;
    case Expr::Kind::Placeholder:
      out += 'C';
      return;
    case Expr::Kind::Apply: {
      const Op op = e.op();
      if (op.kind == OpKind::Id) {
        render(*e.child(0), digits, out);
        return;
      }
      if (op.arity() == 1) {
        out += op.name();
        out += '(';
        render(*e.child(0), digits, out);
        out += ')';
        return;
      }
      out += '(';
      render(*e.child(0), digits, out);
      out += op.infix_symbol();
      render(*e.child(1), digits, out);
      out += ')';
      return;
    }
  }
}

}  // namespace

std::string to_infix_string(const Expr& e, int constant_digits) {
  std::string out;
  render(e, constant_digits, out);
  return out;
}

ParseError::ParseError(const std::string& msg, std::size_t pos)
    : std::runtime_error(msg + " at position " + std::to_string(pos)), position(pos) {}

namespace {

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  Expr::Ptr run() {
    auto e = parse_expr();
    skip_ws();
    if (pos_ != s_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }

  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }

  // expr := term (('+'|'-') term)*
  Expr::Ptr parse_expr() {
    auto lhs = parse_term();
    for (;;) {
      if (consume('+')) {
        lhs = Expr::apply({OpKind::Add}, std::move(lhs), parse_term());
      } else if (consume('-')) {
        lhs = Expr::apply({OpKind::Sub}, std::move(lhs), parse_term());
      } else {
        return lhs;
      }
    }
  }

  // term := unary (('*'|'/') unary)*
  Expr::Ptr parse_term() {
    auto lhs = parse_unary();
    for (;;) {
      if (consume('*')) {
        lhs = Expr::apply({OpKind::Mul}, std::move(lhs), parse_unary());
      } else if (consume('/')) {
        lhs = Expr::apply({OpKind::Div}, std::move(lhs), parse_unary());
      } else {
        return lhs;
      }
    }
  }

  // unary := ('-'|'+') unary | power
  Expr::Ptr parse_unary() {
    if (consume('+')) return parse_unary();
    if (consume('-')) {
      auto operand = parse_unary();
      if (operand->kind() == Expr::Kind::Constant) return Expr::constant(-operand->value());
      return Expr::apply({OpKind::Sub}, Expr::constant(0.0), std::move(operand));
    }
    return parse_power();
  }

  // power := atom ('^' unary)?   (right-associative)
  Expr::Ptr parse_power() {
    auto base = parse_atom();
    if (consume('^')) return Expr::apply({OpKind::Pow}, std::move(base), parse_unary());
    return base;
  }

  Expr::Ptr parse_atom() {
    const char c = peek();
    if (c == '(') {
      ++pos_;
      auto e = parse_expr();
      expect(')');
      return e;
    }
    if (c == 'C') {
      ++pos_;
      return Expr::placeholder();
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (c >= 'a' && c <= 'z') return parse_name();
    throw ParseError("expected expression", pos_);
  }

  Expr::Ptr parse_number() {
    double v = 0.0;
    const char* begin = s_.data() + pos_;
    const char* end = s_.data() + s_.size();
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{}) throw ParseError("bad number", pos_);
    pos_ = static_cast<std::size_t>(res.ptr - s_.data());
    return Expr::constant(v);
  }

  Expr::Ptr parse_name() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] >= 'a' && s_[pos_] <= 'z') ++pos_;
    const std::string name = s_.substr(start, pos_ - start);
    if (name == "x") {
      const std::size_t digit_start = pos_;
      while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
      if (pos_ == digit_start) throw ParseError("expected variable index", pos_);
      int idx = 0;
      std::from_chars(s_.data() + digit_start, s_.data() + pos_, idx);
      if (idx < 1) throw ParseError("variable index must be >= 1", digit_start);
      return Expr::variable(idx);
    }
    static const std::array<std::pair<const char*, OpKind>, 6> fns = {{
        {"sin", OpKind::Sin}, {"cos", OpKind::Cos}, {"sqrt", OpKind::Sqrt},
        {"exp", OpKind::Exp}, {"log", OpKind::Log}, {"id", OpKind::Id},
    }};
    for (const auto& [fname, kind] : fns) {
      if (name == fname) {
        expect('(');
        auto arg = parse_expr();
        expect(')');
        if (kind == OpKind::Id) return arg;  // id collapses on parse
        return Expr::apply({kind}, std::move(arg));
      }
    }
    throw ParseError("unknown name '" + name + "'", start);
  }
};

}  // namespace

Expr::Ptr parse(const std::string& text) { return Parser(text).run(); }

CompiledExpr CompiledExpr::compile(const Expr& e) {
  CompiledExpr out;

  struct Emitter {
    CompiledExpr& c;
    int depth = 0;
    void emit(const Expr& n) {
      switch (n.kind()) {
        case Expr::Kind::Variable:
          c.prog_.push_back({Code::PushVar, OpKind::Id, n.var_index(), 0.0});
          c.max_var_ = std::max(c.max_var_, n.var_index());
          bump(1);
          return;
        case Expr::Kind::Constant:
          c.prog_.push_back({Code::PushConst, OpKind::Id, 0, n.value()});
          bump(1);
          return;
        case Expr::Kind::Placeholder:
          c.prog_.push_back({Code::PushSlot, OpKind::Id, c.slots_++, 0.0});
          bump(1);
          return;
        case Expr::Kind::Apply:
          if (n.op().kind == OpKind::Id) {
            emit(*n.child(0));
            return;
          }
          emit(*n.child(0));
          if (n.num_children() == 2) {
            emit(*n.child(1));
            c.prog_.push_back({Code::Apply2, n.op().kind, 0, 0.0});
            bump(-1);
          } else {
            c.prog_.push_back({Code::Apply1, n.op().kind, 0, 0.0});
          }
          return;
      }
    }
    void bump(int delta) {
      depth += delta;
      c.stack_need_ = std::max(c.stack_need_, depth);
    }
  };

  Emitter em{out};
  em.emit(e);
  return out;
}

bool CompiledExpr::eval(std::span<const double> x, std::span<const double> slots,
                        double& out) const {
  double small_stack[64];
  std::vector<double> big_stack;
  double* st = small_stack;
  if (stack_need_ > 64) {
    big_stack.resize(static_cast<std::size_t>(stack_need_));
    st = big_stack.data();
  }
  int sp = 0;
  for (const Instr& ins : prog_) {
    switch (ins.code) {
      case Code::PushVar: {
        if (ins.arg > static_cast<int>(x.size())) return false;
        const double v = x[ins.arg - 1];
        if (!std::isfinite(v)) return false;
        st[sp++] = v;
        break;
      }
      case Code::PushConst:
        st[sp++] = ins.value;
        break;
      case Code::PushSlot: {
        if (ins.arg >= static_cast<int>(slots.size())) return false;
        const double v = slots[ins.arg];
        if (!std::isfinite(v)) return false;
        st[sp++] = v;
        break;
      }
      case Code::Apply1: {
        auto r = apply_op(ins.op, st[sp - 1], 0.0);
        if (!r) return false;
        st[sp - 1] = *r;
        break;
      }
      case Code::Apply2: {
        auto r = apply_op(ins.op, st[sp - 2], st[sp - 1]);
        if (!r) return false;
        --sp;
        st[sp - 1] = *r;
        break;
      }
    }
  }
  if (sp != 1) return false;
  out = st[0];
  return true;
}

bool CompiledExpr::eval_rows(std::span<const double> X, int n, int d,
                             std::span<const double> slots, std::span<double> out) const {
  for (int i = 0; i < n; ++i) {
    if (!eval(X.subspan(static_cast<std::size_t>(i) * d, d), slots, out[i])) return false;
  }
  return true;
}

}  // namespace symgpt
