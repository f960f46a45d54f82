#include "ike/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "ike/error.hpp"

namespace ike::corpus {
namespace {

using nlohmann::json;

constexpr std::size_t kTestSplitSize = 2000;

enum class RejectKind { kParse, kValidation };

struct Reject {
  RejectKind kind;
  std::string message;
};

[[noreturn]] void throw_reject(const Reject& r, std::size_t line,
                               std::int64_t case_id) {
  std::ostringstream os;
  os << "record";
  if (case_id >= 0) os << " case_id=" << case_id;
  if (line > 0) os << " (line " << line << ")";
  os << ": " << r.message;
  if (r.kind == RejectKind::kParse) throw ParseError(os.str());
  throw ValidationError(os.str());
}

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key)) throw Reject{RejectKind::kParse, std::string("missing field: ") + key};
  const json& v = j.at(key);
  if (!v.is_string()) throw Reject{RejectKind::kParse, std::string("field is not text: ") + key};
  return trim(v.get<std::string>());
}

std::vector<std::string> string_list(const json& j, const char* key,
                                     bool required) {
  if (!j.contains(key)) {
    if (required) throw Reject{RejectKind::kParse, std::string("missing field: ") + key};
    return {};
  }
  const json& v = j.at(key);
  if (!v.is_array()) throw Reject{RejectKind::kParse, std::string("field is not a list: ") + key};
  std::vector<std::string> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) {
      std::ostringstream os;
      os << key << "[" << i << "]: entry is not text";
      throw Reject{RejectKind::kParse, os.str()};
    }
    std::string entry = trim(v[i].get<std::string>());
    if (entry.empty()) {
      std::ostringstream os;
      os << key << "[" << i << "]: empty after trim";
      throw Reject{RejectKind::kValidation, os.str()};
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::size_t count_placeholders(const std::string& text) {
  std::size_t n = 0;
  for (std::size_t pos = text.find("{}"); pos != std::string::npos;
       pos = text.find("{}", pos + 2)) {
    ++n;
  }
  return n;
}

/** Decodes one record object; accepts flat and nested (requested_rewrite) shapes. */
EditRecord decode_record(const json& j) {
  if (!j.is_object()) throw Reject{RejectKind::kParse, "record is not an object"};
  EditRecord rec;
  if (!j.contains("case_id") || !j.at("case_id").is_number_integer()) {
    throw Reject{RejectKind::kParse, "missing field: case_id"};
  }
  rec.case_id = j.at("case_id").get<std::int64_t>();

  if (j.contains("requested_rewrite")) {
    const json& rw = j.at("requested_rewrite");
    if (!rw.is_object()) throw Reject{RejectKind::kParse, "requested_rewrite is not an object"};
    rec.subject = require_string(rw, "subject");
    rec.relation_id = require_string(rw, "relation_id");
    rec.prompt_template = require_string(rw, "prompt");
    auto nested_str = [&](const char* key) -> std::string {
      if (!rw.contains(key)) throw Reject{RejectKind::kParse, std::string("missing field: ") + key};
      const json& v = rw.at(key);
      if (v.is_string()) return trim(v.get<std::string>());
      if (v.is_object() && v.contains("str") && v.at("str").is_string()) {
        return trim(v.at("str").get<std::string>());
      }
      throw Reject{RejectKind::kParse, std::string("field is not text: ") + key};
    };
    rec.target_true = nested_str("target_true");
    rec.target_new = nested_str("target_new");
  } else {
    rec.subject = require_string(j, "subject");
    rec.relation_id = require_string(j, "relation_id");
    rec.prompt_template = require_string(j, "prompt_template");
    rec.target_true = require_string(j, "target_true");
    rec.target_new = require_string(j, "target_new");
  }

  rec.paraphrase_prompts = string_list(j, "paraphrase_prompts", /*required=*/true);
  rec.neighborhood_prompts = string_list(j, "neighborhood_prompts", /*required=*/true);
  rec.generation_prompts = string_list(j, "generation_prompts", /*required=*/false);

  if (rec.subject.empty()) throw Reject{RejectKind::kValidation, "subject: empty after trim"};
  if (rec.relation_id.empty()) throw Reject{RejectKind::kValidation, "relation_id: empty after trim"};
  if (rec.target_true.empty()) throw Reject{RejectKind::kValidation, "target_true: empty after trim"};
  if (rec.target_new.empty()) throw Reject{RejectKind::kValidation, "target_new: empty after trim"};
  if (count_placeholders(rec.prompt_template) != 1) {
    throw Reject{RejectKind::kValidation,
                 "prompt_template: must contain exactly one {} placeholder"};
  }
  if (rec.target_true == rec.target_new) {
    throw Reject{RejectKind::kValidation, "target_new: equals target_true"};
  }
  return rec;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/** Numeric comparison when both labels are pure integers, else lexicographic. */
bool time_label_less(const std::string& a, const std::string& b) {
  auto as_number = [](const std::string& s, long long& out) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (std::size_t k = i; k < s.size(); ++k) {
      if (!std::isdigit(static_cast<unsigned char>(s[k]))) return false;
    }
    try {
      out = std::stoll(s);
    } catch (const std::exception&) {
      return false;
    }
    return true;
  };
  long long na = 0, nb = 0;
  if (as_number(a, na) && as_number(b, nb)) return na < nb;
  return a < b;
}

}  // namespace

std::string trim(std::string_view text) {
  const char* ws = " \t\r\n\v\f";
  std::size_t begin = text.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  std::size_t end = text.find_last_not_of(ws);
  return std::string(text.substr(begin, end - begin + 1));
}

ParsedCorpus parse_counterfact(const std::filesystem::path& file,
                               Strictness strictness) {
  std::string content = read_file(file);
  ParsedCorpus out;
  std::unordered_set<std::int64_t> seen_ids;

  auto consume = [&](const json& j, std::size_t line) {
    std::int64_t id = -1;
    if (j.is_object() && j.contains("case_id") && j.at("case_id").is_number_integer()) {
      id = j.at("case_id").get<std::int64_t>();
    }
    try {
      EditRecord rec = decode_record(j);
      if (!seen_ids.insert(rec.case_id).second) {
        throw Reject{RejectKind::kValidation, "case_id: duplicate"};
      }
      out.records.push_back(std::move(rec));
    } catch (const Reject& r) {
      if (strictness == Strictness::kStrict) throw_reject(r, line, id);
      out.rejects.push_back({line, id, r.message});
    }
  };

  // A document whose first non-space byte is '[' is the raw array export.
  std::size_t first = content.find_first_not_of(" \t\r\n\v\f");
  if (first != std::string::npos && content[first] == '[') {
    json doc;
    try {
      doc = json::parse(content);
    } catch (const json::exception& e) {
      throw ParseError("invalid corpus document: " + std::string(e.what()));
    }
    for (std::size_t i = 0; i < doc.size(); ++i) consume(doc[i], i + 1);
    return out;
  }

  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      Reject r{RejectKind::kParse, std::string("invalid JSON: ") + e.what()};
      if (strictness == Strictness::kStrict) throw_reject(r, line_no, -1);
      out.rejects.push_back({line_no, -1, r.message});
      continue;
    }
    consume(j, line_no);
  }
  return out;
}

ParsedTemplama parse_templama(const std::filesystem::path& file,
                              Strictness strictness) {
  std::string content = read_file(file);
  ParsedTemplama out;

  struct Group {
    TemporalFactRecord record;
    std::size_t first_line;
  };
  std::vector<Group> groups;
  std::map<std::pair<std::string, std::string>, std::size_t> group_index;

  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Reject{RejectKind::kParse, std::string("invalid JSON: ") + e.what()};
      }
      if (!j.is_object()) throw Reject{RejectKind::kParse, "fact is not an object"};
      std::string subject = require_string(j, "subject");
      std::string relation_id = require_string(j, "relation_id");
      std::string query_template = require_string(j, "query_template");
      std::string time_label = require_string(j, "time_label");
      std::string object = require_string(j, "object");
      if (subject.empty()) throw Reject{RejectKind::kValidation, "subject: empty after trim"};
      if (relation_id.empty()) throw Reject{RejectKind::kValidation, "relation_id: empty after trim"};
      if (time_label.empty()) throw Reject{RejectKind::kValidation, "time_label: empty after trim"};
      if (object.empty()) throw Reject{RejectKind::kValidation, "object: empty after trim"};
      std::size_t placeholders = 0;
      for (std::size_t pos = query_template.find("_X_"); pos != std::string::npos;
           pos = query_template.find("_X_", pos + 3)) {
        ++placeholders;
      }
      if (placeholders != 1) {
        throw Reject{RejectKind::kValidation,
                     "query_template: must contain exactly one _X_ placeholder"};
      }

      auto key = std::make_pair(subject, relation_id);
      auto it = group_index.find(key);
      if (it == group_index.end()) {
        group_index.emplace(key, groups.size());
        groups.push_back({TemporalFactRecord{subject, relation_id, query_template, {}},
                          line_no});
        it = group_index.find(key);
      }
      groups[it->second].record.timeline.push_back({time_label, object});
    } catch (const Reject& r) {
      if (strictness == Strictness::kStrict) throw_reject(r, line_no, -1);
      out.rejects.push_back({line_no, -1, r.message});
    }
  }

  for (auto& group : groups) {
    TemporalFactRecord& rec = group.record;
    if (rec.timeline.size() < 2) {
      out.warnings.push_back("skipping (" + rec.subject + ", " + rec.relation_id +
                             "): single-entry timeline cannot be evaluated");
      continue;
    }
    std::stable_sort(rec.timeline.begin(), rec.timeline.end(),
                     [](const TemporalFact& a, const TemporalFact& b) {
                       return time_label_less(a.time_label, b.time_label);
                     });
    Reject reject{RejectKind::kValidation, ""};
    bool bad = false;
    for (std::size_t i = 0; i + 1 < rec.timeline.size() && !bad; ++i) {
      if (rec.timeline[i].time_label == rec.timeline[i + 1].time_label) {
        reject.message = "time_label: duplicate \"" + rec.timeline[i].time_label +
                         "\" in group (" + rec.subject + ", " + rec.relation_id + ")";
        bad = true;
      }
    }
    if (!bad) {
      for (std::size_t i = 0; i < rec.timeline.size() && !bad; ++i) {
        for (std::size_t j = i + 1; j < rec.timeline.size() && !bad; ++j) {
          if (rec.timeline[i].object == rec.timeline[j].object) {
            reject.message = "object: duplicate \"" + rec.timeline[i].object +
                             "\" in group (" + rec.subject + ", " + rec.relation_id + ")";
            bad = true;
          }
        }
      }
    }
    if (bad) {
      if (strictness == Strictness::kStrict) throw_reject(reject, group.first_line, -1);
      out.rejects.push_back({group.first_line, -1, reject.message});
      continue;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::string to_json_line(const EditRecord& record) {
  json j;
  j["case_id"] = record.case_id;
  j["subject"] = record.subject;
  j["relation_id"] = record.relation_id;
  j["prompt_template"] = record.prompt_template;
  j["target_true"] = record.target_true;
  j["target_new"] = record.target_new;
  j["paraphrase_prompts"] = record.paraphrase_prompts;
  j["neighborhood_prompts"] = record.neighborhood_prompts;
  j["generation_prompts"] = record.generation_prompts;
  return j.dump();
}

void write_counterfact(const std::vector<EditRecord>& records,
                       const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + file.string());
  for (const EditRecord& rec : records) out << to_json_line(rec) << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

CorpusSplit split(std::vector<EditRecord> records) {
  if (records.empty()) throw ContractError("split: records must be non-empty");
  CorpusSplit out;
  std::size_t test_size = std::min(kTestSplitSize, records.size());
  out.test.assign(std::make_move_iterator(records.begin()),
                  std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(test_size)));
  out.train.assign(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(test_size)),
                   std::make_move_iterator(records.end()));
  return out;
}

std::string render_template(const std::string& prompt_template,
                            const std::string& subject) {
  std::size_t pos = prompt_template.find("{}");
  if (pos == std::string::npos) {
    throw ContractError("template has no {} placeholder: " + prompt_template);
  }
  std::string out = prompt_template;
  out.replace(pos, 2, subject);
  return out;
}

std::string render_target_prompt(const EditRecord& record) {
  return render_template(record.prompt_template, record.subject);
}

bool eligible_for_eval(const EditRecord& record) {
  return !record.paraphrase_prompts.empty() && !record.neighborhood_prompts.empty();
}

}  // namespace ike::corpus
