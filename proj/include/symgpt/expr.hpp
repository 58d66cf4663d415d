#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace symgpt {

// Operator set P. id/sin/cos/sqrt/exp/log are unary, the rest binary.
enum class OpKind { Id, Add, Mul, Sin, Pow, Cos, Sqrt, Exp, Div, Sub, Log };

struct Op {
  OpKind kind = OpKind::Id;

  int arity() const;
  const char* name() const;
  char infix_symbol() const;  // binary ops only

  // The full operator set, in declaration order.
  static const std::vector<Op>& all();

  friend bool operator==(Op a, Op b) { return a.kind == b.kind; }
};

// Immutable expression tree over P, variables x1..xd, real constants, and the
// constant placeholder C used by skeletons. Nodes are shared freely; all
// operations below are pure.
class Expr {
 public:
  enum class Kind { Variable, Constant, Placeholder, Apply };
  using Ptr = std::shared_ptr<const Expr>;

  static Ptr variable(int index);
  static Ptr constant(double value);
  static Ptr placeholder();
  static Ptr apply(Op op, Ptr a);
  static Ptr apply(Op op, Ptr a, Ptr b);

  Kind kind() const { return kind_; }
  int var_index() const { return var_index_; }
  double value() const { return value_; }
  Op op() const { return op_; }
  int num_children() const { return static_cast<int>(children_.size()); }
  const Ptr& child(int i) const { return children_[i]; }

 private:
  Expr() = default;

  Kind kind_ = Kind::Constant;
  int var_index_ = 0;
  double value_ = 0.0;
  Op op_{};
  std::vector<Ptr> children_;
};

int node_count(const Expr& e);
int tree_depth(const Expr& e);
int placeholder_count(const Expr& e);
int constant_count(const Expr& e);
int max_var_index(const Expr& e);
bool structurally_equal(const Expr& a, const Expr& b);

// Removes id applications: id(e) -> e. Serialization does this implicitly.
Expr::Ptr collapse_id(const Expr::Ptr& e);

// Every Constant node becomes a placeholder; structure is unchanged.
Expr::Ptr skeletonize(const Expr::Ptr& e);

// Substitutes constants for placeholders in depth-first order.
Expr::Ptr substitute_placeholders(const Expr::Ptr& e, std::span<const double> constants);

// nullopt on any domain error (log/sqrt of a negative, division by zero,
// pow leaving the reals) or non-finite intermediate. Never returns NaN/inf.
std::optional<double> evaluate(const Expr& e, std::span<const double> x);

// Same, with placeholders bound in depth-first order. Wrong count -> nullopt.
std::optional<double> evaluate(const Expr& e, std::span<const double> x,
                               std::span<const double> constants);

// Canonical serialization: fully parenthesized infix with named unary
// functions, e.g. "sin((x1*x1))". id applications collapse to their child.
std::string to_infix_string(const Expr& e, int constant_digits = 4);

// %.Ng with a decimal point forced, so constants are visually distinct from
// variable indices ("2" prints as "2.0").
std::string format_constant(double v, int digits);

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t pos);
  std::size_t position;
};

// Inverse of to_infix_string on its image; also accepts unparenthesized
// standard-precedence input (sampled model output is not always canonical).
Expr::Ptr parse(const std::string& text);

// Flat postfix program for fast repeated evaluation of a fixed expression
// over many points (constant fitting, GP fitness). Placeholder slots are
// numbered in the same depth-first order as evaluate().
class CompiledExpr {
 public:
  CompiledExpr() = default;
  static CompiledExpr compile(const Expr& e);

  int slot_count() const { return slots_; }
  int max_var() const { return max_var_; }

  // Returns false on domain error; out is untouched then. Thread-safe.
  bool eval(std::span<const double> x, std::span<const double> slots, double& out) const;

  // Evaluates over an n×d row-major matrix. Returns false if any row fails.
  bool eval_rows(std::span<const double> X, int n, int d,
                 std::span<const double> slots, std::span<double> out) const;

 private:
  enum class Code : std::uint8_t { PushVar, PushConst, PushSlot, Apply1, Apply2 };
  struct Instr {
    Code code;
    OpKind op;
    int arg;
    double value;
  };

  std::vector<Instr> prog_;
  int slots_ = 0;
  int max_var_ = 0;
  int stack_need_ = 0;
};

}  // namespace symgpt
