#include "simstream/stream.hpp"

#include "simstream/expr.hpp"
#include "simstream/state.hpp"

#include <stdexcept>

namespace simstream {

std::string_view source_name(RowSource source) {
  switch (source) {
    case RowSource::Deterministic: return "deterministic";
    case RowSource::Llm: return "llm";
    case RowSource::LlmRevised: return "llm_revised";
    case RowSource::Fallback: return "fallback";
    case RowSource::Human: return "human";
  }
  return "deterministic";
}

std::optional<RowSource> parse_source(std::string_view name) {
  for (auto s : {RowSource::Deterministic, RowSource::Llm, RowSource::LlmRevised, RowSource::Fallback, RowSource::Human}) {
    if (source_name(s) == name) return s;
  }
  return std::nullopt;
}

const Value& StreamRow::tag(std::string_view name) const {
  static const Value kFalse = Value::boolean(false);
  if (tags) {
    for (const auto& [k, v] : *tags) {
      if (k == name) return v;
    }
  }
  return kFalse;
}

std::string row_text(std::string_view lhs, const Value& value) {
  std::string out(lhs);
  out += " = ";
  out += render_value(value);
  return out;
}

const StreamRow& OutputStream::append(StreamRow row) {
  row.index = rows_.size();
  rows_.push_back(std::move(row));
  return rows_.back();
}

namespace {

std::vector<std::string_view> split_top_level(std::string_view text) {
  std::vector<std::string_view> parts;
  int depth = 0;
  char quote = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quote != 0) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '(' || c == '[' || c == '{') {
      ++depth;
    } else if (c == ')' || c == ']' || c == '}') {
      --depth;
    } else if (c == ',' && depth == 0) {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  parts.push_back(text.substr(start));
  return parts;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

Query parse_query(std::string_view text) {
  Query q;
  if (trim(text).empty()) return q;
  for (auto part : split_top_level(text)) {
    part = trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument("query term '" + std::string(part) + "' has no '='");
    const std::string key(trim(part.substr(0, eq)));
    const std::string_view raw = trim(part.substr(eq + 1));
    if (!is_identifier(key)) throw std::invalid_argument("query tag '" + key + "' is not an identifier");
    if (raw.empty()) throw std::invalid_argument("query term '" + key + "' has no value");
    Value v;
    try {
      v = parse_literal(raw);
    } catch (const ParseError&) {
      v = Value::text(std::string(raw));
    } catch (const EvalError&) {
      v = Value::text(std::string(raw));
    }
    q.terms.emplace_back(key, std::move(v));
  }
  return q;
}

std::string format_query(const Query& query) {
  std::string out;
  for (const auto& [k, v] : query.terms) {
    if (!out.empty()) out += ",";
    out += k + "=" + render_value(v);
  }
  return out;
}

bool row_matches(const StreamRow& row, const Query& query) {
  for (const auto& [k, v] : query.terms) {
    if (row.tag(k) != v) return false;
  }
  return true;
}

std::vector<const StreamRow*> select_rows(std::span<const StreamRow> rows, const Query& query) {
  std::vector<const StreamRow*> out;
  for (const auto& row : rows) {
    if (row_matches(row, query)) out.push_back(&row);
  }
  return out;
}

std::vector<const StreamRow*> select_rows(const OutputStream& stream, const Query& query) {
  return select_rows(std::span<const StreamRow>(stream.rows()), query);
}

std::vector<const StreamRow*> last_time_blocks(std::vector<const StreamRow*> rows, std::size_t blocks) {
  if (rows.empty()) return rows;
  if (blocks == 0) return {};
  std::size_t seen = 1;
  std::size_t cut = rows.size() - 1;
  while (cut > 0) {
    if (!identical(rows[cut - 1]->time, rows[cut]->time)) {
      if (seen == blocks) break;
      ++seen;
    }
    --cut;
  }
  rows.erase(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
  return rows;
}

std::string render_context(std::span<const StreamRow* const> rows) {
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) {
      out.push_back('\n');
      if (!identical(rows[i - 1]->time, rows[i]->time)) out.push_back('\n');
    }
    out += rows[i]->text;
  }
  return out;
}

std::string render_context(std::span<const StreamRow> rows) {
  std::vector<const StreamRow*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r);
  return render_context(std::span<const StreamRow* const>(ptrs));
}

std::string query_stream(const OutputStream& stream, const Query& query) {
  const auto rows = select_rows(stream, query);
  return render_context(std::span<const StreamRow* const>(rows));
}

}  // namespace simstream
