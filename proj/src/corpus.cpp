#include "ideodepth/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ideodepth/errors.hpp"

namespace ideodepth::corpus {

using json = nlohmann::json;

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (end == text.size()) break;
        start = end + 1;
    }
    // A trailing newline produces one empty tail entry.
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        auto end = line.find(',', start);
        if (end == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, end - start)));
        start = end + 1;
    }
    return cells;
}

template <typename Labels>
void require_unique(const Labels& labels, std::string_view what) {
    std::set<std::string_view> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) throw ValidationError(std::string(what) + " duplicate label \"" + l + "\"");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Eval: return "eval";
        case Split::Unassigned: break;
    }
    return "unassigned";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "eval") return Split::Eval;
    if (text == "unassigned" || text.empty()) return Split::Unassigned;
    throw ValidationError("unknown split \"" + std::string(text) + "\"");
}

TopicTaxonomy TopicTaxonomy::defaults() {
    return TopicTaxonomy({
        "Abortion Rights",
        "Climate & Environment",
        "Criminal Justice",
        "Economic Regulation",
        "Gun Control",
        "Healthcare",
        "Immigration & Refugees",
        "Military & Defense Spending",
        "Political & Ideological Stances",
        "Social Welfare & Poverty",
        "Tax Policy",
        "Traditional Values & Gender Roles",
    });
}

TopicTaxonomy::TopicTaxonomy(std::vector<std::string> categories) : categories_(std::move(categories)) {
    if (categories_.empty()) throw ValidationError("topic taxonomy must not be empty");
    require_unique(categories_, "taxonomy");
    for (const auto& c : categories_)
        if (c.empty()) throw ValidationError("taxonomy category names must be non-empty");
}

bool TopicTaxonomy::contains(std::string_view name) const { return index_of(name) != npos; }

std::size_t TopicTaxonomy::index_of(std::string_view name) const {
    auto it = std::find(categories_.begin(), categories_.end(), name);
    return it == categories_.end() ? npos : static_cast<std::size_t>(it - categories_.begin());
}

StatementSet::StatementSet(std::vector<Statement> statements) : statements_(std::move(statements)) {
    index_.reserve(statements_.size());
    for (std::size_t i = 0; i < statements_.size(); ++i) {
        if (!index_.emplace(statements_[i].id, i).second)
            throw ValidationError("duplicate statement id \"" + statements_[i].id + "\"");
    }
}

const Statement* StatementSet::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &statements_[it->second];
}

void StatementSet::check_topics(const TopicTaxonomy& taxonomy) const {
    for (const auto& s : statements_) {
        if (s.topic && !taxonomy.contains(*s.topic))
            throw ValidationError("statement \"" + s.id + "\" has topic \"" + *s.topic + "\" outside the taxonomy");
    }
}

std::vector<std::string> StatementSet::topics() const {
    std::set<std::string> t;
    for (const auto& s : statements_)
        if (s.topic) t.insert(*s.topic);
    return {t.begin(), t.end()};
}

StatementSet parse_statements_text(std::string_view text) {
    std::vector<Statement> out;
    std::size_t line_no = 0;
    for (auto line : split_lines(text)) {
        ++line_no;
        if (is_blank(line)) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed statement record: ") + e.what(), line_no);
        }
        if (!rec.is_object()) throw ParseError("statement record must be an object", line_no);
        Statement s;
        try {
            s.id = rec.at("id").get<std::string>();
            s.text = rec.at("text").get<std::string>();
            if (rec.contains("topic") && !rec["topic"].is_null()) s.topic = rec["topic"].get<std::string>();
            if (rec.contains("split") && !rec["split"].is_null()) s.split = parse_split(rec["split"].get<std::string>());
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad statement field: ") + e.what(), line_no);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no);
        }
        if (s.id.empty()) throw ParseError("statement id must be non-empty", line_no);
        out.push_back(std::move(s));
    }
    return StatementSet(std::move(out));
}

StatementSet parse_statements(const std::filesystem::path& path) { return parse_statements_text(read_file(path)); }

std::string serialize_statements(const StatementSet& set) {
    std::string out;
    for (const auto& s : set) {
        json rec = json::object();
        rec["id"] = s.id;
        rec["text"] = s.text;
        rec["topic"] = s.topic ? json(*s.topic) : json(nullptr);
        rec["split"] = std::string(to_string(s.split));
        out += rec.dump();
        out += '\n';
    }
    return out;
}

void write_statements(const StatementSet& set, const std::filesystem::path& path) {
    write_file(path, serialize_statements(set));
}

SplitReport validate_split(const StatementSet& set, std::size_t min_per_topic) {
    SplitReport r;
    r.min_required = min_per_topic;
    for (const auto& t : set.topics()) r.eval_per_topic[t] = 0;
    for (const auto& s : set) {
        switch (s.split) {
            case Split::Eval:
                ++r.eval_count;
                if (s.topic)
                    ++r.eval_per_topic[*s.topic];
                else
                    r.untopiced_eval.push_back(s.id);
                break;
            case Split::Train: ++r.train_count; break;
            case Split::Unassigned: ++r.unassigned_count; break;
        }
    }
    if (!r.eval_per_topic.empty()) {
        r.min_eval_per_topic = r.eval_per_topic.begin()->second;
        for (const auto& [topic, n] : r.eval_per_topic) {
            r.min_eval_per_topic = std::min(r.min_eval_per_topic, n);
            if (n < min_per_topic) r.violations.push_back(topic);
        }
    }
    r.train_empty = r.train_count == 0;
    r.eval_empty = r.eval_count == 0;
    return r;
}

// ---------------------------------------------------------------------------

std::string_view to_token(Response r) {
    switch (r) {
        case Response::Liberal: return "1";
        case Response::Conservative: return "0";
        case Response::Null: break;
    }
    return "null";
}

ResponseMatrix::ResponseMatrix(std::vector<std::string> row_labels, std::vector<std::string> col_labels,
                               std::vector<Response> entries)
    : row_labels_(std::move(row_labels)), col_labels_(std::move(col_labels)), entries_(std::move(entries)) {
    require_unique(row_labels_, "response matrix row");
    require_unique(col_labels_, "response matrix column");
    if (entries_.size() != row_labels_.size() * col_labels_.size())
        throw ValidationError("response matrix entry count " + std::to_string(entries_.size()) +
                              " does not match " + std::to_string(row_labels_.size()) + "x" +
                              std::to_string(col_labels_.size()));
}

std::vector<Response> ResponseMatrix::row(std::size_t r) const {
    auto first = entries_.begin() + static_cast<std::ptrdiff_t>(r * cols());
    return {first, first + static_cast<std::ptrdiff_t>(cols())};
}

std::vector<Response> ResponseMatrix::column(std::size_t c) const {
    std::vector<Response> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = (*this)(r, c);
    return out;
}

std::optional<std::size_t> ResponseMatrix::row_index(std::string_view label) const {
    auto it = std::find(row_labels_.begin(), row_labels_.end(), label);
    if (it == row_labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - row_labels_.begin());
}

std::optional<std::size_t> ResponseMatrix::col_index(std::string_view label) const {
    auto it = std::find(col_labels_.begin(), col_labels_.end(), label);
    if (it == col_labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - col_labels_.begin());
}

ResponseMatrix ResponseMatrix::select_rows(const std::vector<std::size_t>& rows) const {
    std::vector<std::string> labels;
    std::vector<Response> entries;
    for (auto r : rows) {
        labels.push_back(row_labels_.at(r));
        auto vals = row(r);
        entries.insert(entries.end(), vals.begin(), vals.end());
    }
    return ResponseMatrix(std::move(labels), col_labels_, std::move(entries));
}

ResponseMatrix ResponseMatrix::select_cols(const std::vector<std::size_t>& cols) const {
    std::vector<std::string> labels;
    for (auto c : cols) labels.push_back(col_labels_.at(c));
    std::vector<Response> entries;
    entries.reserve(rows() * cols.size());
    for (std::size_t r = 0; r < rows(); ++r)
        for (auto c : cols) entries.push_back((*this)(r, c));
    return ResponseMatrix(row_labels_, std::move(labels), std::move(entries));
}

ResponseMatrix parse_response_matrix_text(std::string_view text) {
    auto lines = split_lines(text);
    std::size_t line_no = 0;
    std::vector<std::string> cols;
    std::vector<std::string> rows;
    std::vector<Response> entries;
    bool have_header = false;
    for (auto line : lines) {
        ++line_no;
        if (is_blank(line)) continue;
        auto cells = split_csv(line);
        if (!have_header) {
            // The corner cell names the row-label column and is ignored.
            for (std::size_t i = 1; i < cells.size(); ++i) cols.emplace_back(cells[i]);
            have_header = true;
            continue;
        }
        if (cells.size() != cols.size() + 1)
            throw ParseError("row has " + std::to_string(cells.size() - 1) + " cells, header has " +
                                 std::to_string(cols.size()),
                             line_no);
        rows.emplace_back(cells[0]);
        for (std::size_t i = 1; i < cells.size(); ++i) {
            const auto tok = cells[i];
            if (tok == "1")
                entries.push_back(Response::Liberal);
            else if (tok == "0")
                entries.push_back(Response::Conservative);
            else if (tok == "null")
                entries.push_back(Response::Null);
            else
                throw ParseError("invalid response \"" + std::string(tok) + "\" in column " + cols[i - 1] +
                                     " (expected 0, 1 or null)",
                                 line_no);
        }
    }
    return ResponseMatrix(std::move(rows), std::move(cols), std::move(entries));
}

ResponseMatrix parse_response_matrix(const std::filesystem::path& path) {
    return parse_response_matrix_text(read_file(path));
}

std::string serialize_response_matrix(const ResponseMatrix& m) {
    std::string out = "respondent";
    for (const auto& c : m.col_labels()) {
        out += ',';
        out += c;
    }
    out += '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out += m.row_labels()[r];
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out += ',';
            out += to_token(m(r, c));
        }
        out += '\n';
    }
    return out;
}

void write_response_matrix(const ResponseMatrix& m, const std::filesystem::path& path) {
    for (const auto& l : m.row_labels())
        if (l.find(',') != std::string::npos) throw ValidationError("row label contains a comma: " + l);
    for (const auto& l : m.col_labels())
        if (l.find(',') != std::string::npos) throw ValidationError("column label contains a comma: " + l);
    write_file(path, serialize_response_matrix(m));
}

// ---------------------------------------------------------------------------

namespace {

std::string join_shape(const std::vector<std::int64_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<std::int64_t> parse_shape(std::string_view text) {
    std::vector<std::int64_t> shape;
    for (auto cell : split_csv(text)) {
        std::int64_t v = 0;
        try {
            std::size_t used = 0;
            v = std::stoll(std::string(cell), &used);
            if (used != cell.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError("tensor shape entry \"" + std::string(cell) + "\" is not an integer");
        }
        shape.push_back(v);
    }
    return shape;
}

void put_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

std::uint32_t get_u32_be(std::string_view b) {
    return (std::uint32_t(static_cast<unsigned char>(b[0])) << 24) |
           (std::uint32_t(static_cast<unsigned char>(b[1])) << 16) |
           (std::uint32_t(static_cast<unsigned char>(b[2])) << 8) | std::uint32_t(static_cast<unsigned char>(b[3]));
}

}  // namespace

std::size_t TensorContainer::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

void TensorContainer::validate() const {
    if (shape.empty()) throw ValidationError("tensor shape must have at least one dimension");
    for (auto d : shape)
        if (d <= 0) throw ValidationError("tensor shape entries must be positive, got [" + join_shape(shape) + "]");
    if (element_count() != data.size())
        throw ValidationError("tensor shape [" + join_shape(shape) + "] implies " + std::to_string(element_count()) +
                              " elements, payload has " + std::to_string(data.size()));
    for (const auto& [k, v] : metadata) {
        if (k.empty() || k.find(':') != std::string::npos || k.find('\n') != std::string::npos)
            throw ValidationError("tensor metadata key \"" + k + "\" is not encodable");
        if (v.find('\n') != std::string::npos) throw ValidationError("tensor metadata value for \"" + k + "\" has a newline");
        if (k == "shape" || k == "dtype") throw ValidationError("tensor metadata key \"" + k + "\" is reserved");
    }
}

bool TensorContainer::operator==(const TensorContainer& other) const {
    return metadata == other.metadata && shape == other.shape && data.size() == other.data.size() &&
           std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
}

std::string encode_tensor(const TensorContainer& c) {
    c.validate();
    std::map<std::string, std::string> header = c.metadata;
    header["dtype"] = "f32";
    header["shape"] = join_shape(c.shape);
    std::string head;
    for (const auto& [k, v] : header) {
        head += k;
        head += ':';
        head += v;
        head += '\n';
    }
    std::string out(kTensorMagic);
    put_u32_be(out, static_cast<std::uint32_t>(head.size()));
    out += head;
    const auto offset = out.size();
    out.resize(offset + c.data.size() * 4);
    char* dst = out.data() + offset;
    for (float f : c.data) {
        auto bits = std::bit_cast<std::uint32_t>(f);
        dst[0] = static_cast<char>(bits & 0xff);
        dst[1] = static_cast<char>((bits >> 8) & 0xff);
        dst[2] = static_cast<char>((bits >> 16) & 0xff);
        dst[3] = static_cast<char>((bits >> 24) & 0xff);
        dst += 4;
    }
    return out;
}

TensorContainer decode_tensor(std::string_view bytes) {
    if (bytes.size() < kTensorMagic.size() + 4 || bytes.substr(0, kTensorMagic.size()) != kTensorMagic)
        throw FormatError("not a tensor container (bad magic)");
    const auto head_len = get_u32_be(bytes.substr(kTensorMagic.size(), 4));
    const std::size_t head_start = kTensorMagic.size() + 4;
    if (bytes.size() < head_start + head_len) throw CorruptionError("tensor header truncated");
    std::string_view head = bytes.substr(head_start, head_len);

    TensorContainer c;
    std::optional<std::string> dtype;
    std::optional<std::vector<std::int64_t>> shape;
    for (auto line : split_lines(head)) {
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string_view::npos) throw FormatError("tensor header line without ':'");
        std::string key(line.substr(0, colon));
        std::string value(line.substr(colon + 1));
        if (key == "dtype")
            dtype = value;
        else if (key == "shape")
            shape = parse_shape(value);
        else
            c.metadata.emplace(std::move(key), std::move(value));
    }
    if (!shape) throw FormatError("tensor header missing \"shape\"");
    if (!dtype) throw FormatError("tensor header missing \"dtype\"");
    if (*dtype != "f32") throw FormatError("unsupported tensor dtype \"" + *dtype + "\"");
    c.shape = *shape;
    if (c.shape.empty()) throw FormatError("tensor shape is empty");
    for (auto d : c.shape)
        if (d <= 0) throw FormatError("tensor shape entries must be positive");

    const std::size_t payload = bytes.size() - head_start - head_len;
    const std::size_t want = c.element_count() * 4;
    if (payload < want)
        throw CorruptionError("tensor payload has " + std::to_string(payload) + " bytes, shape needs " +
                              std::to_string(want));
    if (payload > want) throw CorruptionError("tensor payload has " + std::to_string(payload - want) + " trailing bytes");

    c.data.resize(c.element_count());
    const char* src = bytes.data() + head_start + head_len;
    for (auto& f : c.data) {
        std::uint32_t bits = std::uint32_t(static_cast<unsigned char>(src[0])) |
                             (std::uint32_t(static_cast<unsigned char>(src[1])) << 8) |
                             (std::uint32_t(static_cast<unsigned char>(src[2])) << 16) |
                             (std::uint32_t(static_cast<unsigned char>(src[3])) << 24);
        f = std::bit_cast<float>(bits);
        src += 4;
    }
    return c;
}

void write_tensor(const TensorContainer& c, const std::filesystem::path& path) { write_file(path, encode_tensor(c)); }

TensorContainer read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

// ---------------------------------------------------------------------------

SaeActivationMatrix::SaeActivationMatrix(std::vector<std::string> prompt_ids, std::size_t feature_dim,
                                         std::vector<SaeEntry> entries)
    : prompt_ids_(std::move(prompt_ids)), feature_dim_(feature_dim) {
    require_unique(prompt_ids_, "SAE prompt");
    if (feature_dim_ == 0) throw ValidationError("SAE feature dimension must be positive");
    entries_.reserve(entries.size());
    for (const auto& e : entries) {
        if (e.prompt >= prompt_ids_.size())
            throw ValidationError("SAE entry prompt index " + std::to_string(e.prompt) + " out of range");
        if (e.feature >= feature_dim_)
            throw ValidationError("SAE feature " + std::to_string(e.feature) + " >= feature dimension " +
                                  std::to_string(feature_dim_));
        if (!(e.activation >= 0.0))
            throw ValidationError("SAE activation must be non-negative (feature " + std::to_string(e.feature) + ")");
        if (e.token == 0)
            throw ValidationError("SAE entry for feature " + std::to_string(e.feature) + " points at the bos token");
        if (e.activation < kActivationDust) continue;
        entries_.push_back(e);
    }
    std::sort(entries_.begin(), entries_.end(), [](const SaeEntry& a, const SaeEntry& b) {
        return a.prompt != b.prompt ? a.prompt < b.prompt : a.feature < b.feature;
    });
    for (std::size_t i = 1; i < entries_.size(); ++i) {
        if (entries_[i].prompt == entries_[i - 1].prompt && entries_[i].feature == entries_[i - 1].feature)
            throw ValidationError("duplicate SAE entry for prompt \"" + prompt_ids_[entries_[i].prompt] +
                                  "\" feature " + std::to_string(entries_[i].feature));
    }
}

SaeActivationMatrix parse_sae_matrix_text(std::string_view text) {
    std::vector<std::string> prompts;
    std::unordered_map<std::string, std::size_t> prompt_index;
    std::size_t feature_dim = 0;
    std::vector<SaeEntry> entries;
    bool have_header = false;
    std::size_t line_no = 0;
    for (auto line : split_lines(text)) {
        ++line_no;
        if (is_blank(line)) continue;
        try {
            auto rec = json::parse(line);
            if (!have_header) {
                feature_dim = rec.at("feature_dim").get<std::size_t>();
                prompts = rec.at("prompt_ids").get<std::vector<std::string>>();
                for (std::size_t i = 0; i < prompts.size(); ++i) prompt_index.emplace(prompts[i], i);
                have_header = true;
                continue;
            }
            SaeEntry e;
            auto pid = rec.at("prompt").get<std::string>();
            auto it = prompt_index.find(pid);
            if (it == prompt_index.end()) throw ParseError("unknown prompt id \"" + pid + "\"", line_no);
            e.prompt = it->second;
            e.feature = rec.at("feature").get<std::size_t>();
            e.activation = rec.at("activation").get<double>();
            e.token = rec.at("token").get<std::size_t>();
            entries.push_back(e);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed SAE record: ") + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("SAE matrix file has no header record", 1);
    return SaeActivationMatrix(std::move(prompts), feature_dim, std::move(entries));
}

SaeActivationMatrix parse_sae_matrix(const std::filesystem::path& path) { return parse_sae_matrix_text(read_file(path)); }

std::string serialize_sae_matrix(const SaeActivationMatrix& m) {
    std::string out;
    json head = {{"feature_dim", m.feature_dim()}, {"prompt_ids", m.prompt_ids()}};
    out += head.dump();
    out += '\n';
    for (const auto& e : m.entries()) {
        json rec = {{"prompt", m.prompt_ids()[e.prompt]},
                    {"feature", e.feature},
                    {"activation", e.activation},
                    {"token", e.token}};
        out += rec.dump();
        out += '\n';
    }
    return out;
}

void write_sae_matrix(const SaeActivationMatrix& m, const std::filesystem::path& path) {
    write_file(path, serialize_sae_matrix(m));
}

// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ideodepth::corpus
