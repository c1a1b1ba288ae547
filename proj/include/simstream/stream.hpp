#pragma once

#include "simstream/value.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace simstream {

enum class RowSource : std::uint8_t { Deterministic, Llm, LlmRevised, Fallback, Human };

std::string_view source_name(RowSource source);
std::optional<RowSource> parse_source(std::string_view name);

using TagMap = std::vector<std::pair<std::string, Value>>;

struct StreamRow {
  std::size_t index = 0;
  Value time;
  std::string entity;
  std::string operator_id;
  std::string lhs;
  Value value;
  std::string text;  // lhs + " = " + render_value(value)
  std::shared_ptr<const TagMap> tags;  // shared between rows of the same operator
  RowSource source = RowSource::Deterministic;

  // Tag lookup; tags the row does not carry read as False.
  const Value& tag(std::string_view name) const;
};

std::string row_text(std::string_view lhs, const Value& value);

/// Append-only sequence of rows. Indices equal positions.
class OutputStream {
 public:
  const StreamRow& append(StreamRow row);  // assigns row.index

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const StreamRow& operator[](std::size_t i) const { return rows_[i]; }
  const std::vector<StreamRow>& rows() const { return rows_; }
  auto begin() const { return rows_.begin(); }
  auto end() const { return rows_.end(); }

 private:
  std::vector<StreamRow> rows_;
};

/// Conjunction of tag == value terms; the empty query matches every row.
struct Query {
  std::vector<std::pair<std::string, Value>> terms;
  bool empty() const { return terms.empty(); }
};

// "planning=True,entity=\"alice\"" -> Query. Values are expression literals;
// a bare word that is not a literal is taken as text.
Query parse_query(std::string_view text);
std::string format_query(const Query& query);

bool row_matches(const StreamRow& row, const Query& query);

std::vector<const StreamRow*> select_rows(const OutputStream& stream, const Query& query);
std::vector<const StreamRow*> select_rows(std::span<const StreamRow> rows, const Query& query);

// Keeps only the rows of the last `blocks` distinct time groups.
std::vector<const StreamRow*> last_time_blocks(std::vector<const StreamRow*> rows, std::size_t blocks);

/// One row per line, a blank line wherever the time value changes between
/// consecutive rows, no trailing newline.
std::string render_context(std::span<const StreamRow* const> rows);
std::string render_context(std::span<const StreamRow> rows);

std::string query_stream(const OutputStream& stream, const Query& query);

}  // namespace simstream
