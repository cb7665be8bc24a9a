#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace promptshap {

/// Whether a field carries decision-critical content (dunder-named, e.g.
/// `__v18_price_A__`) or structural filler (`v1_The`).
enum class InfoClass { HighInformation, LowInformation };

std::string_view to_string(InfoClass c);

struct FieldDescriptor {
    int index = 0;  ///< 1-based, dense in document order
    std::string name;
    InfoClass info_class = InfoClass::LowInformation;
};

/// One piece of a parsed template: either raw literal text or a field marker.
/// Field segments keep the original marker bytes so a parsed template can be
/// re-serialized byte-exactly.
struct TemplateSegment {
    enum class Kind { Literal, Field };
    Kind kind = Kind::Literal;
    std::string text;       ///< literal bytes (Kind::Literal)
    FieldDescriptor field;  ///< (Kind::Field)
    std::string marker;     ///< raw `{{ ... }}` bytes (Kind::Field)

    static TemplateSegment literal(std::string t);
    static TemplateSegment field_marker(FieldDescriptor f, std::string raw);
};

/// A prompt template: ordered literal/field segments parsed from text with
/// double-brace markers. Markers are `{{`, optional whitespace, a field name
/// matching [A-Za-z_][A-Za-z0-9_]*, optional whitespace, `}}` — flat
/// substitution only, no nesting or expressions. Immutable once parsed.
class PromptTemplate {
public:
    /// Parse template text. Throws Error with code UnbalancedBraces,
    /// InvalidFieldName, DuplicateFieldName or EmptyTemplate.
    static PromptTemplate parse(std::string_view source);

    /// Parse a UTF-8 template file. The file contents are the template,
    /// byte for byte (a trailing newline is part of it).
    static PromptTemplate parse_file(const std::filesystem::path& path);

    const std::vector<TemplateSegment>& segments() const { return segments_; }
    int field_count() const { return static_cast<int>(fields_.size()); }

    const FieldDescriptor& field(int index) const;  ///< 1-based
    const FieldDescriptor* find_field(std::string_view name) const;

    std::vector<std::string> field_names() const;  ///< in index order

    /// Reconstruct the source text; equals the parsed bytes exactly.
    std::string serialize() const;

private:
    std::vector<TemplateSegment> segments_;
    std::vector<const TemplateSegment*> fields_;  // by index, into segments_
    std::map<std::string, int, std::less<>> index_by_name_;
};

/// A full field assignment for a template: the x of the attribution game,
/// or the reference vector r when built via `make_reference`. Covers every
/// field exactly once. Immutable.
class PromptVector {
public:
    PromptVector(const PromptTemplate& tmpl, std::vector<std::string> values_by_index);

    /// Resolve a name→value map against the template. Throws
    /// MissingFieldValue / UnknownFieldName on coverage violations.
    static PromptVector from_names(const PromptTemplate& tmpl,
                                   const std::map<std::string, std::string>& values);

    const std::string& value(int index) const;  ///< 1-based
    const std::vector<std::string>& values() const { return values_; }
    int field_count() const { return static_cast<int>(values_.size()); }

private:
    explicit PromptVector(std::vector<std::string> values) : values_(std::move(values)) {}
    friend PromptVector compose(const PromptVector&, const PromptVector&, class Coalition);

    std::vector<std::string> values_;
};

/// The r of the game; by convention every field holds the reference token
/// (default "_"), so an absent field renders as the token surrounded by the
/// template's literal spacing.
using ReferenceVector = PromptVector;

ReferenceVector make_reference(const PromptTemplate& tmpl, std::string_view token = "_");

/// A subset of field indices {1..I}. Bitset semantics, capacity 64.
class Coalition {
public:
    Coalition() = default;

    static Coalition empty() { return Coalition(); }
    static Coalition full(int field_count);
    static Coalition of(std::initializer_list<int> members);
    static Coalition from_bits(std::uint64_t bits) { return Coalition(bits); }

    bool contains(int index) const { return (bits_ >> (index - 1)) & 1u; }
    Coalition with(int index) const;
    Coalition without(int index) const;
    int size() const;
    bool is_empty() const { return bits_ == 0; }
    std::uint64_t bits() const { return bits_; }

    static constexpr int capacity = 64;

private:
    explicit Coalition(std::uint64_t bits) : bits_(bits) {}
    std::uint64_t bits_ = 0;
};

/// Substitute every field marker with its assigned value.
std::string render(const PromptTemplate& tmpl, const PromptVector& assignment);

/// Render from a raw value span (no coverage re-validation); values are
/// ordered by field index.
std::string render_values(const PromptTemplate& tmpl, std::span<const std::string> values);

/// Composite input: x's value on coalition members, r's value elsewhere.
/// compose(x, r, {}) == r and compose(x, r, full) == x.
PromptVector compose(const PromptVector& x, const ReferenceVector& r, Coalition s);

/// Field index (1-based position in the vector) → info class.
std::vector<InfoClass> field_info_classes(const PromptTemplate& tmpl);

/// Load a JSON object mapping field name → string value.
std::map<std::string, std::string> load_values_file(const std::filesystem::path& path);

}  // namespace promptshap
