#include "promptshap/template.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cctype>
#include <fstream>
#include <sstream>

#include "promptshap/errors.hpp"

namespace promptshap {

namespace {

bool is_name_start(char c) {
    return c == '_' || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z');
}

bool is_name_char(char c) {
    return is_name_start(c) || (c >= '0' && c <= '9');
}

bool is_marker_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
}

InfoClass classify(std::string_view name) {
    if (name.size() >= 4 && name.substr(0, 2) == "__" && name.substr(name.size() - 2) == "__") {
        return InfoClass::HighInformation;
    }
    return InfoClass::LowInformation;
}

}  // namespace

std::string_view to_string(InfoClass c) {
    return c == InfoClass::HighInformation ? "high" : "low";
}

TemplateSegment TemplateSegment::literal(std::string t) {
    TemplateSegment s;
    s.kind = Kind::Literal;
    s.text = std::move(t);
    return s;
}

TemplateSegment TemplateSegment::field_marker(FieldDescriptor f, std::string raw) {
    TemplateSegment s;
    s.kind = Kind::Field;
    s.field = std::move(f);
    s.marker = std::move(raw);
    return s;
}

PromptTemplate PromptTemplate::parse(std::string_view source) {
    PromptTemplate tmpl;
    std::size_t pos = 0;
    while (pos < source.size()) {
        const std::size_t open = source.find("{{", pos);
        if (open == std::string_view::npos) {
            tmpl.segments_.push_back(TemplateSegment::literal(std::string(source.substr(pos))));
            break;
        }
        if (open > pos) {
            tmpl.segments_.push_back(
                TemplateSegment::literal(std::string(source.substr(pos, open - pos))));
        }
        const std::size_t close = source.find("}}", open + 2);
        if (close == std::string_view::npos) {
            throw Error(ErrorKind::Config, "UnbalancedBraces",
                        "field marker opened at byte " + std::to_string(open) +
                            " is never closed with }}");
        }
        // Interior must be: whitespace* name whitespace*
        std::size_t p = open + 2;
        while (p < close && is_marker_space(source[p])) ++p;
        const std::size_t name_start = p;
        if (p < close && is_name_start(source[p])) {
            ++p;
            while (p < close && is_name_char(source[p])) ++p;
        }
        const std::string name(source.substr(name_start, p - name_start));
        while (p < close && is_marker_space(source[p])) ++p;
        if (name.empty() || p != close) {
            throw Error(ErrorKind::Config, "InvalidFieldName",
                        "field marker at byte " + std::to_string(open) +
                            " must contain a single name matching [A-Za-z_][A-Za-z0-9_]*");
        }
        if (tmpl.index_by_name_.count(name)) {
            throw Error(ErrorKind::Config, "DuplicateFieldName",
                        "field name '" + name + "' appears more than once");
        }
        FieldDescriptor desc;
        desc.index = static_cast<int>(tmpl.index_by_name_.size()) + 1;
        desc.name = name;
        desc.info_class = classify(name);
        tmpl.index_by_name_.emplace(name, desc.index);
        tmpl.segments_.push_back(TemplateSegment::field_marker(
            std::move(desc), std::string(source.substr(open, close + 2 - open))));
        pos = close + 2;
    }
    for (const auto& seg : tmpl.segments_) {
        if (seg.kind == TemplateSegment::Kind::Field) tmpl.fields_.push_back(&seg);
    }
    if (tmpl.fields_.empty()) {
        throw Error(ErrorKind::Config, "EmptyTemplate", "template contains no field markers");
    }
    return tmpl;
}

PromptTemplate PromptTemplate::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "FileOpenFailed",
                    "cannot open template file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const FieldDescriptor& PromptTemplate::field(int index) const {
    if (index < 1 || index > field_count()) {
        throw Error(ErrorKind::Config, "FieldIndexOutOfRange",
                    "field index " + std::to_string(index) + " not in 1.." +
                        std::to_string(field_count()));
    }
    return fields_[static_cast<std::size_t>(index - 1)]->field;
}

const FieldDescriptor* PromptTemplate::find_field(std::string_view name) const {
    auto it = index_by_name_.find(name);
    if (it == index_by_name_.end()) return nullptr;
    return &fields_[static_cast<std::size_t>(it->second - 1)]->field;
}

std::vector<std::string> PromptTemplate::field_names() const {
    std::vector<std::string> names;
    names.reserve(fields_.size());
    for (const auto* f : fields_) names.push_back(f->field.name);
    return names;
}

std::string PromptTemplate::serialize() const {
    std::string out;
    for (const auto& seg : segments_) {
        out += seg.kind == TemplateSegment::Kind::Literal ? seg.text : seg.marker;
    }
    return out;
}

PromptVector::PromptVector(const PromptTemplate& tmpl, std::vector<std::string> values_by_index)
    : values_(std::move(values_by_index)) {
    if (static_cast<int>(values_.size()) != tmpl.field_count()) {
        throw Error(ErrorKind::Config, "MissingFieldValue",
                    "assignment has " + std::to_string(values_.size()) + " values, template has " +
                        std::to_string(tmpl.field_count()) + " fields");
    }
}

PromptVector PromptVector::from_names(const PromptTemplate& tmpl,
                                      const std::map<std::string, std::string>& values) {
    for (const auto& [name, _] : values) {
        if (!tmpl.find_field(name)) {
            throw Error(ErrorKind::Config, "UnknownFieldName",
                        "value given for '" + name + "', which is not a template field");
        }
    }
    std::vector<std::string> by_index;
    by_index.reserve(static_cast<std::size_t>(tmpl.field_count()));
    for (const std::string& name : tmpl.field_names()) {
        auto it = values.find(name);
        if (it == values.end()) {
            throw Error(ErrorKind::Config, "MissingFieldValue",
                        "no value for template field '" + name + "'");
        }
        by_index.push_back(it->second);
    }
    return PromptVector(tmpl, std::move(by_index));
}

const std::string& PromptVector::value(int index) const {
    return values_.at(static_cast<std::size_t>(index - 1));
}

ReferenceVector make_reference(const PromptTemplate& tmpl, std::string_view token) {
    return PromptVector(tmpl, std::vector<std::string>(
                                  static_cast<std::size_t>(tmpl.field_count()),
                                  std::string(token)));
}

Coalition Coalition::full(int field_count) {
    if (field_count < 0 || field_count > capacity) {
        throw Error(ErrorKind::Estimation, "TooManyFields",
                    "coalitions support at most " + std::to_string(capacity) + " fields, got " +
                        std::to_string(field_count));
    }
    if (field_count == capacity) return Coalition(~std::uint64_t{0});
    return Coalition((std::uint64_t{1} << field_count) - 1);
}

Coalition Coalition::of(std::initializer_list<int> members) {
    Coalition c;
    for (int m : members) c = c.with(m);
    return c;
}

Coalition Coalition::with(int index) const {
    if (index < 1 || index > capacity) {
        throw Error(ErrorKind::Config, "CoalitionOutOfRange",
                    "member index " + std::to_string(index) + " outside 1.." +
                        std::to_string(capacity));
    }
    return Coalition(bits_ | (std::uint64_t{1} << (index - 1)));
}

Coalition Coalition::without(int index) const {
    if (index < 1 || index > capacity) {
        throw Error(ErrorKind::Config, "CoalitionOutOfRange",
                    "member index " + std::to_string(index) + " outside 1.." +
                        std::to_string(capacity));
    }
    return Coalition(bits_ & ~(std::uint64_t{1} << (index - 1)));
}

int Coalition::size() const { return std::popcount(bits_); }

std::string render(const PromptTemplate& tmpl, const PromptVector& assignment) {
    if (assignment.field_count() != tmpl.field_count()) {
        throw Error(ErrorKind::Config, "MissingFieldValue",
                    "assignment covers " + std::to_string(assignment.field_count()) +
                        " fields, template has " + std::to_string(tmpl.field_count()));
    }
    return render_values(tmpl, assignment.values());
}

std::string render_values(const PromptTemplate& tmpl, std::span<const std::string> values) {
    std::string out;
    for (const auto& seg : tmpl.segments()) {
        if (seg.kind == TemplateSegment::Kind::Literal) {
            out += seg.text;
        } else {
            out += values[static_cast<std::size_t>(seg.field.index - 1)];
        }
    }
    return out;
}

PromptVector compose(const PromptVector& x, const ReferenceVector& r, Coalition s) {
    if (x.field_count() != r.field_count()) {
        throw Error(ErrorKind::Config, "FieldSetMismatch",
                    "x covers " + std::to_string(x.field_count()) + " fields, r covers " +
                        std::to_string(r.field_count()));
    }
    const int n = x.field_count();
    if (n < Coalition::capacity) {
        const std::uint64_t valid = (std::uint64_t{1} << n) - 1;
        if (s.bits() & ~valid) {
            throw Error(ErrorKind::Config, "CoalitionOutOfRange",
                        "coalition contains members beyond field count " + std::to_string(n));
        }
    }
    std::vector<std::string> values = r.values();
    for (int i = 1; i <= n; ++i) {
        if (s.contains(i)) values[static_cast<std::size_t>(i - 1)] = x.value(i);
    }
    return PromptVector(std::move(values));
}

std::vector<InfoClass> field_info_classes(const PromptTemplate& tmpl) {
    std::vector<InfoClass> classes;
    classes.reserve(static_cast<std::size_t>(tmpl.field_count()));
    for (int i = 1; i <= tmpl.field_count(); ++i) {
        classes.push_back(tmpl.field(i).info_class);
    }
    return classes;
}

std::map<std::string, std::string> load_values_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "FileOpenFailed", "cannot open values file " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, "InvalidValuesFile",
                    path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) {
        throw Error(ErrorKind::Config, "InvalidValuesFile",
                    path.string() + " must contain a JSON object of field name -> string");
    }
    std::map<std::string, std::string> values;
    for (const auto& [key, val] : doc.items()) {
        if (!val.is_string()) {
            throw Error(ErrorKind::Config, "InvalidValuesFile",
                        "value for '" + key + "' must be a string");
        }
        values[key] = val.get<std::string>();
    }
    return values;
}

}  // namespace promptshap
