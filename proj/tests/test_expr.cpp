#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace simstream;
using namespace testing;

namespace {

Value eval(std::string_view text, const State& s = {}, std::string_view scope = {}) {
  return evaluate(parse_expression(text), s, scope);
}

Value eval_rhs(std::string_view assignment, const State& s) { return evaluate(parse_assignment(assignment).rhs, s); }

ParseErrorKind parse_kind(std::string_view text, bool assignment = false) {
  try {
    if (assignment) {
      parse_assignment(text);
    } else {
      parse_expression(text);
    }
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a parse error for: " << text);
  return ParseErrorKind::Syntax;
}

EvalErrorKind eval_kind(std::string_view text, const State& s = {}) {
  try {
    eval(text, s);
  } catch (const EvalError& e) {
    return e.kind();
  }
  FAIL("expected an evaluation error for: " << text);
  return EvalErrorKind::NameError;
}

// Random values up to `depth` levels of nesting, finite reals only.
struct ValueGen {
  std::mt19937_64 rng;
  explicit ValueGen(std::uint64_t seed) : rng(seed) {}

  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

  std::string text() {
    static const std::string kAlphabet = "abcXYZ 019_\"\\'\n\t,()[]{}=:#é";
    std::string s;
    const int n = pick(8);
    for (int i = 0; i < n; ++i) {
      const int c = pick(static_cast<int>(kAlphabet.size()));
      // Keep multi-byte characters whole.
      if (static_cast<unsigned char>(kAlphabet[c]) >= 0x80) {
        s += "é";
      } else {
        s += kAlphabet[c];
      }
    }
    return s;
  }

  Value scalar() {
    switch (pick(6)) {
      case 0: return Value::null();
      case 1: return Value::integer(std::uniform_int_distribution<std::int64_t>(-1'000'000'000'000, 1'000'000'000'000)(rng));
      case 2: {
        double x = std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        if (pick(4) == 0) x = std::ldexp(x, pick(200) - 100);
        if (pick(8) == 0) x = std::round(x);
        return Value::real(x);
      }
      case 3: return Value::boolean(pick(2) == 1);
      default: return Value::text(text());
    }
  }

  Value value(int depth) {
    if (depth == 0 || pick(3) == 0) return scalar();
    const int n = pick(4);
    switch (pick(3)) {
      case 0: {
        ValueList items;
        for (int i = 0; i < n; ++i) items.push_back(value(depth - 1));
        return Value::list(std::move(items));
      }
      case 1: {
        ValueList items;
        for (int i = 0; i < n; ++i) items.push_back(value(depth - 1));
        return Value::tuple(std::move(items));
      }
      default: {
        MapEntries entries;
        for (int i = 0; i < n; ++i) entries.emplace_back("k" + std::to_string(i) + text(), value(depth - 1));
        return Value::map(std::move(entries));
      }
    }
  }
};

}  // namespace

TEST_SUITE("expr") {
  TEST_CASE("parse shapes") {
    CHECK(debug_string(parse_expression("time + 1")) == "Add(Ident(time), Int(1))");
    CHECK(debug_string(parse_expression("max(0, min(4, location_x + move_x))")) ==
          "Call(max, Int(0), Call(min, Int(4), Add(Ident(location_x), Ident(move_x))))");
    CHECK(debug_string(parse_expression("-1 if (time % 2 == 0) else 0")) ==
          "If(Eq(Mod(Ident(time), Int(2)), Int(0)), Int(-1), Int(0))");
    CHECK(parse_kind("") == ParseErrorKind::Empty);
    CHECK(parse_kind("   ") == ParseErrorKind::Empty);
  }

  TEST_CASE("parse errors carry positions") {
    try {
      parse_assignment("x = ");
      FAIL("no error");
    } catch (const ParseError& e) {
      CHECK(e.position() == 4);
    }
    try {
      parse_expression("1 + * 2");
      FAIL("no error");
    } catch (const ParseError& e) {
      CHECK(e.kind() == ParseErrorKind::Syntax);
      CHECK(e.position() == 4);
    }
  }

  TEST_CASE("assignments") {
    auto a = parse_assignment("move_x = 1");
    CHECK(a.lhs == "move_x");
    CHECK(debug_string(a.rhs) == "Int(1)");

    a = parse_assignment("previous.append((location_x, location_y))");
    CHECK(a.lhs == "previous");
    CHECK(debug_string(a.rhs) == "Concat(Ident(previous), List(Tuple(Ident(location_x), Ident(location_y))))");

    a = parse_assignment("agent.x = agent.x + 1");
    CHECK(a.lhs == "agent.x");

    CHECK(parse_kind("1 + 2", true) == ParseErrorKind::NotAnAssignment);
    CHECK(parse_kind("x = 1; y = 2", true) == ParseErrorKind::MultipleStatements);
    CHECK(parse_kind("x = 1\ny = 2", true) == ParseErrorKind::MultipleStatements);
    CHECK(parse_kind("x.upper()", true) == ParseErrorKind::NotAnAssignment);
  }

  TEST_CASE("augmented assignment desugars") {
    const State s{{"x", v_int(4)}};
    CHECK(eval_rhs("x += 3", s) == v_int(7));
    CHECK(eval_rhs("x -= 3", s) == v_int(1));
    CHECK(eval_rhs("x *= 2", s) == v_int(8));
    CHECK(eval_rhs("x //= 3", s) == v_int(1));
  }

  TEST_CASE("spec examples evaluate") {
    CHECK(eval("max(0, min(4, location_x + move_x))", State{{"location_x", v_int(0)}, {"move_x", v_int(1)}}) == v_int(1));
    CHECK(eval("-1 if (time % 2 == 0) else 0", State{{"time", v_int(2)}}) == v_int(-1));
    CHECK(eval_kind("x / 0", State{{"x", v_int(1)}}) == EvalErrorKind::DivisionByZero);
    CHECK(eval_kind("x // 0", State{{"x", v_int(1)}}) == EvalErrorKind::DivisionByZero);
    CHECK(eval_kind("x % 0", State{{"x", v_int(1)}}) == EvalErrorKind::DivisionByZero);
  }

  TEST_CASE("numeric tower") {
    CHECK(eval("7 / 2").is_real());
    CHECK(eval("7 / 2") == v_real(3.5));
    CHECK(eval("4 / 2").is_real());
    CHECK(eval("7 // 2") == v_int(3));
    CHECK(eval("-7 // 2") == v_int(-4));
    CHECK(eval("-7 % 3") == v_int(2));
    CHECK(eval("7.5 // 2") == v_real(3.0));
    CHECK(eval("2 ** 10") == v_int(1024));
    CHECK(eval("2 ** -1") == v_real(0.5));
    CHECK(eval("1 == 1.0") == v_bool(true));
    CHECK(eval("True == 1") == v_bool(false));
    CHECK(eval("True + 1") == v_int(2));
    CHECK(eval_kind("9223372036854775807 + 1") == EvalErrorKind::Overflow);
  }

  TEST_CASE("builtins") {
    CHECK(eval("abs(-3)") == v_int(3));
    CHECK(eval("len([1, 2, 3])") == v_int(3));
    CHECK(eval("len(\"abc\")") == v_int(3));
    CHECK(eval("round(2.675, 2)") == v_real(2.67));  // 2.675 is stored just below the tie
    CHECK(eval("round(2.5)") == v_int(2));
    CHECK(eval("round(3.5)") == v_int(4));
    CHECK(eval("sum([1, 2, 3.5])") == v_real(6.5));
    CHECK(eval("int(\"42\")") == v_int(42));
    CHECK(eval("int(-2.7)") == v_int(-2));
    CHECK(eval("float(2)") == v_real(2.0));
    CHECK(eval("str(12)") == v_text("12"));
    CHECK(eval("str(\"a\")") == v_text("a"));
    CHECK(eval("bool([])") == v_bool(false));
    CHECK(eval("sorted([3, 1, 2])") == eval("[1, 2, 3]"));
    CHECK(eval("range(3)") == eval("[0, 1, 2]"));
    CHECK(eval("range(1, 7, 2)") == eval("[1, 3, 5]"));
    CHECK(eval("mean([1, 2, 3, 4])") == v_real(2.5));
    CHECK(eval("sqrt(16)") == v_real(4.0));
    CHECK(eval("cos(0)") == v_real(1.0));
    CHECK(eval("sin(0)") == v_real(0.0));
    CHECK(eval("tan(0)") == v_real(0.0));
    CHECK(eval("exp(0)") == v_real(1.0));
    CHECK(eval("log(e)") == v_real(1.0));
    CHECK(eval("pi") == v_real(M_PI));
    CHECK(eval("min(3, 1, 2)") == v_int(1));
    CHECK(eval("max([4, 9, 2])") == v_int(9));
  }

  TEST_CASE("methods") {
    CHECK(eval("\"Ab\".upper()") == v_text("AB"));
    CHECK(eval("\"Ab\".lower()") == v_text("ab"));
    CHECK(eval("\"a,b\".split(\",\")") == eval("[\"a\", \"b\"]"));
    CHECK(eval("\"-\".join([\"a\", \"b\"])") == v_text("a-b"));
    CHECK(eval("\"at {} and {}\".format(1, \"x\")") == v_text("at 1 and x"));
    CHECK(eval("[1, 2, 1].count(1)") == v_int(2));
    CHECK(eval("[5, 6, 7].index(6)") == v_int(1));
    CHECK(eval("[1].append(2)") == eval("[1, 2]"));
    CHECK(eval("\"throw to bob\".startswith(\"throw to \")") == v_bool(true));
  }

  TEST_CASE("containers") {
    CHECK(eval("[1, 2, 3][-1]") == v_int(3));
    CHECK(eval("[1, 2, 3][1:]") == eval("[2, 3]"));
    CHECK(eval("\"hello\"[1:3]") == v_text("el"));
    CHECK(eval("(1, 2) + (3,)") == eval("(1, 2, 3)"));
    CHECK(eval("[1] + [2]") == eval("[1, 2]"));
    CHECK(eval("{\"a\": 1}[\"a\"]") == v_int(1));
    CHECK(eval("2 in (1, 2)") == v_bool(true));
    CHECK(eval("(1, 2) in [(1, 2)]") == v_bool(true));
    CHECK(eval("3 not in [1, 2]") == v_bool(true));
    CHECK(eval("1 < 2 <= 2 < 3") == v_bool(true));
    CHECK(eval_kind("[1, 2][5]") == EvalErrorKind::IndexOutOfRange);
    CHECK(eval_kind("{\"a\": 1}[\"b\"]") == EvalErrorKind::IndexOutOfRange);
  }

  TEST_CASE("names and scopes") {
    const State s{{"time", v_int(3)}, {"agent.x", v_int(1)}, {"x", v_int(9)}, {"bob.x", v_int(2)}};
    CHECK(eval("x", s, "agent") == v_int(1));  // entity-local first
    CHECK(eval("x", s, "carol") == v_int(9));  // then global
    CHECK(eval("x", s) == v_int(9));
    CHECK(eval("bob.x", s, "agent") == v_int(2));
    CHECK(eval("time", s, "agent") == v_int(3));
    CHECK(eval_kind("missing", s) == EvalErrorKind::NameError);
    CHECK(eval_kind("1 + \"a\"") == EvalErrorKind::TypeMismatch);
  }

  TEST_CASE("short circuit and conditional") {
    CHECK(eval("False and missing") == v_bool(false));
    CHECK(eval("True or missing") == v_bool(true));
    CHECK(eval("1 if True else missing") == v_int(1));
    CHECK(eval("0 or 5") == v_int(5));
    CHECK(eval("not []") == v_bool(true));
  }

  TEST_CASE("rendering") {
    CHECK(render_value(eval("[(0, 0), (1, 0)]")) == "[(0, 0), (1, 0)]");
    CHECK(render_value(v_bool(false)) == "False");
    CHECK(render_value(v_text("At (1, 0). No cheese.")) == "\"At (1, 0). No cheese.\"");
    CHECK(render_value(v_text("a\"b\\c\nd")) == "\"a\\\"b\\\\c\\nd\"");
    CHECK(render_value(Value::null()) == "None");
    CHECK(render_value(v_real(1.0)) == "1.0");
    CHECK(render_value(v_int(1)) == "1");
    CHECK(render_value(v_real(0.1)) == "0.1");
    CHECK(render_value(eval("(1,)")) == "(1,)");
    CHECK(render_value(eval("{\"a\": [1]}")) == "{\"a\": [1]}");
    CHECK(v_int(1) == v_real(1.0));
    CHECK_FALSE(identical(v_int(1), v_real(1.0)));
  }

  TEST_CASE("round trip over random values") {
    ValueGen gen(0x5eed);
    for (int i = 0; i < 10000; ++i) {
      const Value v = gen.value(4);
      const std::string text = render_value(v);
      const Value back = parse_literal(text);
      REQUIRE_MESSAGE(back == v, text);
      REQUIRE_MESSAGE(identical(back, v), text);
      REQUIRE(render_value(back) == text);
    }
  }

  TEST_CASE("purity and determinism") {
    ValueGen gen(77);
    const std::vector<std::string> exprs = {"x + [1]", "len(x)", "sorted(x)", "x.append(3)", "x * 2", "x[0:1]"};
    for (int i = 0; i < 500; ++i) {
      ValueList items;
      for (int k = 0; k < 1 + gen.pick(4); ++k) items.push_back(v_int(gen.pick(100)));
      const State s{{"x", Value::list(items)}, {"y", gen.value(3)}};
      const State before = s;
      for (const auto& e : exprs) {
        const Expr parsed = parse_expression(e);
        const Value a = evaluate(parsed, s);
        const Value b = evaluate(parsed, s);
        CHECK(identical(a, b));
      }
      CHECK(s == before);
      CHECK(identical(s.at("x"), before.at("x")));
    }
  }

  TEST_CASE("canonicalized append equals concatenation") {
    // Brute force over all lists of length <= 3 drawn from a small alphabet.
    const std::vector<Value> alphabet = {v_int(0), v_int(-1), v_text("a"), eval("(1, 2)"), Value::null()};
    std::vector<ValueList> lists = {{}};
    for (int len = 1; len <= 3; ++len) {
      std::vector<ValueList> next;
      for (const auto& l : lists) {
        if (static_cast<int>(l.size()) != len - 1) continue;
        for (const auto& a : alphabet) {
          auto m = l;
          m.push_back(a);
          next.push_back(m);
        }
      }
      lists.insert(lists.end(), next.begin(), next.end());
    }
    const Assignment sugar = parse_assignment("v.append(e)");
    CHECK(sugar.lhs == "v");
    for (const auto& l : lists) {
      for (const auto& e : alphabet) {
        const State s{{"v", Value::list(l)}, {"e", e}};
        ValueList expected = l;
        expected.push_back(e);
        CHECK(identical(evaluate(sugar.rhs, s), Value::list(expected)));
      }
    }
  }

  TEST_CASE("sandbox corpus") {
    for (const char* hostile : {"import os", "__import__('os')", "x.__class__", "().__class__.__bases__",
                                "lambda: 1", "open('/etc/passwd')", "eval('1')", "exec('1')", "globals()",
                                "getattr(x, 'y')", "[x for x in range(3)]", "x := 1", "del x", "yield 1"}) {
      bool rejected = false;
      try {
        evaluate(parse_expression(hostile), State{{"x", v_int(1)}});
      } catch (const ParseError&) {
        rejected = true;
      } catch (const EvalError&) {
        rejected = true;
      }
      CHECK_MESSAGE(rejected, hostile);
    }
    CHECK(eval_kind("range(10000000)") == EvalErrorKind::ResourceLimit);
    CHECK(eval_kind("\"a\" * 10000000") == EvalErrorKind::ResourceLimit);
    CHECK(eval_kind("[0] * 10000000") == EvalErrorKind::ResourceLimit);
    CHECK(eval_kind("2 ** 100000") == EvalErrorKind::Overflow);
    CHECK(parse_kind(std::string(500, '(') + "1" + std::string(500, ')')) == ParseErrorKind::ForbiddenConstruct);
  }

  TEST_CASE("parse_literal") {
    CHECK(parse_literal("3") == v_int(3));
    CHECK(parse_literal("-2.5") == v_real(-2.5));
    CHECK(parse_literal("\"x\"") == v_text("x"));
    CHECK(parse_literal("True") == v_bool(true));
    CHECK(parse_literal("[1, (2, 3)]") == eval("[1, (2, 3)]"));
    CHECK_THROWS(parse_literal("x + 1"));
  }
}

// Every formula from the cheese operator table and the program-format
// listings, evaluated against hand-built states.
TEST_SUITE("golden formulas") {
  TEST_CASE("operator table") {
    const State s{{"time", v_int(1)},
                  {"location_x", v_int(4)},
                  {"location_y", v_int(0)},
                  {"move_x", v_int(1)},
                  {"move_y", v_int(-1)},
                  {"previous", eval("[(0, 0)]")},
                  {"first_summary", v_text("first")},
                  {"cheese_map", eval("[[False, True], [True, False]]")}};
    struct Row {
      const char* formula;
      const char* lhs;
      Value expected;
    };
    const std::vector<Row> table = {
        {"time = time + 1", "time", v_int(2)},
        {"objective = \"Find cheese in 5x5 grid\"", "objective", v_text("Find cheese in 5x5 grid")},
        {"high_level_plan = \"Explore the grid systematically\"", "high_level_plan", v_text("Explore the grid systematically")},
        {"movement_plan = \"Move right then down, repeating\"", "movement_plan", v_text("Move right then down, repeating")},
        {"move_x = 1 if (time % 2 == 1) else 0", "move_x", v_int(1)},
        {"move_y = -1 if (time % 2 == 0) else 0", "move_y", v_int(0)},
        {"location_x = max(0, min(4, location_x + move_x))", "location_x", v_int(4)},
        {"location_y = max(0, min(4, location_y + move_y))", "location_y", v_int(0)},
        {"previous.append((location_x, location_y))", "previous", eval("[(0, 0), (4, 0)]")},
        {"summary = first_summary", "summary", v_text("first")},
    };
    for (const auto& row : table) {
      const Assignment a = parse_assignment(row.formula);
      CHECK(a.lhs == row.lhs);
      CHECK_MESSAGE(identical(evaluate(a.rhs, s), row.expected), row.formula);
    }

    State even = s;
    even.set("time", v_int(2));
    CHECK(eval_rhs("move_x = 1 if (time % 2 == 1) else 0", even) == v_int(0));
    CHECK(eval_rhs("move_y = -1 if (time % 2 == 0) else 0", even) == v_int(-1));

    State at = s;
    at.set("location_x", v_int(1));
    at.set("location_y", v_int(0));
    CHECK(eval_rhs("cheese_found = cheese_map[location_x][location_y]", at) == v_bool(true));
    at.set("location_y", v_int(1));
    CHECK(eval_rhs("cheese_found = cheese_map[location_x][location_y]", at) == v_bool(false));
  }

  TEST_CASE("program-format listings") {
    // The flat listing's Time operator and the literal initial state.
    CHECK(eval_rhs("time = time + 1", State{{"time", v_int(0)}}) == v_int(1));
    const Value init = parse_literal(
        "{\"time\": 0, \"location_x\": 0, \"location_y\": 0, \"move_x\": 0, \"move_y\": 0, \"previous\": [], "
        "\"cheese_found\": False, \"planning\": False, \"movement\": False}");
    CHECK(init.as_map().size() == 9);
    CHECK(*init.find("previous") == Value::list({}));
  }

  TEST_CASE("location clamping under random moves") {
    const Expr fx = parse_assignment("location_x = max(0, min(4, location_x + move_x))").rhs;
    const Expr fy = parse_assignment("location_y = max(0, min(4, location_y + move_y))").rhs;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> move(-1, 1);
    for (int seq = 0; seq < 10000; ++seq) {
      State s{{"location_x", v_int(0)}, {"location_y", v_int(0)}, {"move_x", v_int(0)}, {"move_y", v_int(0)}};
      std::int64_t ox = 0, oy = 0;
      for (int k = 0; k < 25; ++k) {
        const int mx = move(rng), my = move(rng);
        s.set("move_x", v_int(mx));
        s.set("move_y", v_int(my));
        s.set("location_x", evaluate(fx, s));
        s.set("location_y", evaluate(fy, s));
        ox = std::clamp<std::int64_t>(ox + mx, 0, 4);
        oy = std::clamp<std::int64_t>(oy + my, 0, 4);
        const auto x = s.at("location_x").as_int(), y = s.at("location_y").as_int();
        REQUIRE(x >= 0);
        REQUIRE(x <= 4);
        REQUIRE(y >= 0);
        REQUIRE(y <= 4);
        REQUIRE(x == ox);
        REQUIRE(y == oy);
      }
    }
  }
}
