#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "eco/harness.hpp"
#include "eco/rng.hpp"
#include "eco/text.hpp"

namespace eco::harness {

namespace {

using nlohmann::ordered_json;

// Disjoint consonant/vowel families guarantee zero vocabulary overlap
// between the forget, retain and general question distributions, which is
// what makes the reference classifier separable at desk scale.
struct WordFamily {
  const char* consonants;
  const char* vowels;
};

constexpr WordFamily kForgetFamily{"zqxj", "uo"};
constexpr WordFamily kRetainFamily{"mrtls", "aei"};
constexpr WordFamily kAuthorsFamily{"npk", "aei"};
constexpr WordFamily kFactsFamily{"cdg", "aei"};
constexpr WordFamily kGeneralFamily{"bv", "ao"};
constexpr WordFamily kDecoyFamily{"fhw", "yu"};

std::string make_word(rng::Stream& stream, const WordFamily& family,
                      int syllables) {
  const std::string consonants = family.consonants;
  const std::string vowels = family.vowels;
  std::string word;
  for (int s = 0; s < syllables; ++s) {
    word.push_back(consonants[stream.next_below(consonants.size())]);
    word.push_back(vowels[stream.next_below(vowels.size())]);
  }
  return word;
}

std::vector<std::string> make_pool(rng::Stream& stream,
                                   const WordFamily& family,
                                   std::size_t size) {
  std::set<std::string> words;
  while (words.size() < size) {
    const int syllables = 2 + static_cast<int>(stream.next_below(3));
    words.insert(make_word(stream, family, syllables));
  }
  return {words.begin(), words.end()};
}

std::string sample_sentence(rng::Stream& stream,
                            const std::vector<std::string>& pool,
                            std::size_t min_len, std::size_t max_len) {
  const std::size_t len =
      min_len + stream.next_below(max_len - min_len + 1);
  TokenList words;
  words.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    words.push_back(pool[stream.next_below(pool.size())]);
  }
  return text::join(words);
}

std::string paraphrase(rng::Stream& stream, const std::string& answer,
                       const std::vector<std::string>& pool) {
  TokenList words = text::split_ws(answer);
  // Swap every fourth position, keeping most tokens aligned with the
  // original answer.
  for (std::size_t i = 3; i < words.size(); i += 4) {
    words[i] = pool[stream.next_below(pool.size())];
  }
  return text::join(words);
}

QaRecord make_qa(rng::Stream& stream, const std::vector<std::string>& pool,
                 const std::vector<std::string>& decoys, Subset subset,
                 bool with_paraphrase) {
  QaRecord record;
  record.subset = subset;
  record.forget_scope = subset == Subset::Forget;
  record.question = sample_sentence(stream, pool, 8, 11);
  record.answer = sample_sentence(stream, pool, 8, 8);
  if (with_paraphrase) {
    record.paraphrased_answer = paraphrase(stream, record.answer, pool);
  }
  for (int i = 0; i < 4; ++i) {
    record.perturbed_answers.push_back(sample_sentence(stream, decoys, 8, 8));
  }
  return record;
}

ordered_json qa_to_json(const QaRecord& record) {
  ordered_json j;
  j["subset"] = to_string(record.subset);
  j["question"] = record.question;
  j["answer"] = record.answer;
  if (record.paraphrased_answer) {
    j["paraphrased_answer"] = *record.paraphrased_answer;
  }
  if (!record.perturbed_answers.empty()) {
    j["perturbed_answers"] = record.perturbed_answers;
  }
  if (record.subset == Subset::Calibration) {
    j["label"] = record.forget_scope ? "forget" : "retain";
  }
  return j;
}

QaRecord qa_from_json(const ordered_json& j) {
  QaRecord record;
  record.subset = subset_from_string(j.at("subset").get<std::string>());
  record.question = j.at("question").get<std::string>();
  record.answer = j.at("answer").get<std::string>();
  if (j.contains("paraphrased_answer")) {
    record.paraphrased_answer = j.at("paraphrased_answer").get<std::string>();
  }
  if (j.contains("perturbed_answers")) {
    record.perturbed_answers =
        j.at("perturbed_answers").get<std::vector<std::string>>();
  }
  if (j.contains("label")) {
    record.forget_scope = j.at("label").get<std::string>() == "forget";
  } else {
    record.forget_scope = record.subset == Subset::Forget;
  }
  return record;
}

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<ordered_json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << "\n";
}

std::vector<ordered_json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<ordered_json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(ordered_json::parse(line));
  }
  return rows;
}

}  // namespace

const char* to_string(Subset subset) {
  switch (subset) {
    case Subset::Forget: return "forget";
    case Subset::Retain: return "retain";
    case Subset::RealAuthors: return "real_authors";
    case Subset::WorldFacts: return "world_facts";
    case Subset::General: return "general";
    case Subset::Calibration: return "calibration";
  }
  return "?";
}

Subset subset_from_string(const std::string& s) {
  if (s == "forget") return Subset::Forget;
  if (s == "retain") return Subset::Retain;
  if (s == "real_authors") return Subset::RealAuthors;
  if (s == "world_facts") return Subset::WorldFacts;
  if (s == "general") return Subset::General;
  if (s == "calibration") return Subset::Calibration;
  throw std::invalid_argument("unknown subset tag: " + s);
}

std::string format_mc_prompt(const McRecord& record) {
  std::ostringstream out;
  out << "The following are multiple choice questions (with answers) about "
      << record.subject << ".\n\n";
  out << record.question << "\n";
  static constexpr char kLetters[4] = {'A', 'B', 'C', 'D'};
  for (int i = 0; i < 4; ++i) {
    out << kLetters[i] << ". " << record.choices[static_cast<std::size_t>(i)]
        << "\n";
  }
  out << "Answer:";
  return out.str();
}

void gen_synthetic_corpus(const CorpusSpec& spec,
                          const std::filesystem::path& dir) {
  if (spec.forget == 0 || spec.retain == 0) {
    throw std::invalid_argument("gen_synthetic_corpus: sizes must be >= 1");
  }
  std::filesystem::create_directories(dir);
  rng::Stream stream(spec.seed);

  const auto forget_pool = make_pool(stream, kForgetFamily, 90);
  const auto retain_pool = make_pool(stream, kRetainFamily, 700);
  const auto authors_pool = make_pool(stream, kAuthorsFamily, 140);
  const auto facts_pool = make_pool(stream, kFactsFamily, 140);
  const auto general_pool = make_pool(stream, kGeneralFamily, 240);
  const auto decoy_pool = make_pool(stream, kDecoyFamily, 400);

  backend::KnowledgeTable original;
  backend::KnowledgeTable retained;

  const auto emit_qa = [&](const std::vector<std::string>& pool, Subset subset,
                           std::size_t count, bool with_paraphrase,
                           bool in_retained) {
    std::vector<QaRecord> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      QaRecord record = make_qa(stream, pool, decoy_pool, subset, with_paraphrase);
      original.add(record.question, record.answer);
      if (in_retained) retained.add(record.question, record.answer);
      records.push_back(std::move(record));
    }
    return records;
  };

  const auto forget = emit_qa(forget_pool, Subset::Forget, spec.forget,
                              /*with_paraphrase=*/true, /*in_retained=*/false);
  const auto retain = emit_qa(retain_pool, Subset::Retain, spec.retain,
                              /*with_paraphrase=*/true, /*in_retained=*/true);
  const auto retain_heldout =
      emit_qa(retain_pool, Subset::Retain, spec.retain_heldout,
              /*with_paraphrase=*/true, /*in_retained=*/true);
  const auto real_authors =
      emit_qa(authors_pool, Subset::RealAuthors, spec.real_authors,
              /*with_paraphrase=*/false, /*in_retained=*/true);
  const auto world_facts =
      emit_qa(facts_pool, Subset::WorldFacts, spec.world_facts,
              /*with_paraphrase=*/false, /*in_retained=*/true);
  const auto general = emit_qa(general_pool, Subset::General, spec.general,
                               /*with_paraphrase=*/false, /*in_retained=*/true);

  // Calibration split: labeled mix of unseen forget-, retain- and
  // general-family questions so the threshold lands between the clusters.
  std::vector<QaRecord> calibration;
  for (std::size_t i = 0; i < spec.calibration; ++i) {
    QaRecord record;
    record.subset = Subset::Calibration;
    const auto bucket = stream.next_below(10);
    if (bucket < 3) {
      record.question = sample_sentence(stream, forget_pool, 8, 11);
      record.forget_scope = true;
    } else if (bucket < 7) {
      record.question = sample_sentence(stream, retain_pool, 8, 11);
      record.forget_scope = false;
    } else {
      record.question = sample_sentence(stream, general_pool, 8, 11);
      record.forget_scope = false;
    }
    record.answer = sample_sentence(stream, retain_pool, 8, 8);
    calibration.push_back(std::move(record));
  }

  std::vector<McRecord> mc;
  static constexpr char kLetters[4] = {'A', 'B', 'C', 'D'};
  for (std::size_t i = 0; i < spec.mc; ++i) {
    McRecord record;
    record.subject = forget_pool[stream.next_below(forget_pool.size())];
    record.question = sample_sentence(stream, forget_pool, 8, 11) + " ?";
    for (auto& choice : record.choices) {
      choice = sample_sentence(stream, decoy_pool, 2, 3);
    }
    record.gold = static_cast<int>(stream.next_below(4));
    mc.push_back(record);
    original.add(format_mc_prompt(mc.back()),
                 std::string(1, kLetters[mc.back().gold]));
  }

  const auto dump_qa = [&](const char* name,
                           const std::vector<QaRecord>& records) {
    std::vector<ordered_json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(qa_to_json(r));
    write_jsonl(dir / name, rows);
  };
  dump_qa("forget.jsonl", forget);
  dump_qa("retain.jsonl", retain);
  dump_qa("retain_heldout.jsonl", retain_heldout);
  dump_qa("real_authors.jsonl", real_authors);
  dump_qa("world_facts.jsonl", world_facts);
  dump_qa("general.jsonl", general);
  dump_qa("calibration.jsonl", calibration);

  {
    std::vector<ordered_json> rows;
    rows.reserve(mc.size());
    for (const auto& r : mc) {
      ordered_json j;
      j["subject"] = r.subject;
      j["question"] = r.question;
      j["choices"] = r.choices;
      j["gold"] = r.gold;
      rows.push_back(std::move(j));
    }
    write_jsonl(dir / "mc.jsonl", rows);
  }

  const auto dump_table = [&](const char* name,
                              const backend::KnowledgeTable& table) {
    std::vector<ordered_json> rows;
    rows.reserve(table.entries.size());
    for (const auto& [key, answer] : table.entries) {
      ordered_json j;
      j["key"] = key;
      j["answer"] = answer;
      rows.push_back(std::move(j));
    }
    write_jsonl(dir / name, rows);
  };
  dump_table("knowledge_original.jsonl", original);
  dump_table("knowledge_retained.jsonl", retained);

  ordered_json manifest;
  manifest["version"] = "1";
  manifest["seed"] = spec.seed;
  manifest["sizes"] = {
      {"forget", spec.forget},
      {"retain", spec.retain},
      {"retain_heldout", spec.retain_heldout},
      {"real_authors", spec.real_authors},
      {"world_facts", spec.world_facts},
      {"general", spec.general},
      {"calibration", spec.calibration},
      {"mc", spec.mc},
  };
  std::ofstream manifest_out(dir / "manifest.json",
                             std::ios::binary | std::ios::trunc);
  manifest_out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset dataset;
  const auto load_qa = [&](const char* name) {
    std::vector<QaRecord> records;
    for (const auto& row : read_jsonl(dir / name)) {
      records.push_back(qa_from_json(row));
    }
    return records;
  };
  dataset.forget = load_qa("forget.jsonl");
  dataset.retain = load_qa("retain.jsonl");
  dataset.retain_heldout = load_qa("retain_heldout.jsonl");
  dataset.real_authors = load_qa("real_authors.jsonl");
  dataset.world_facts = load_qa("world_facts.jsonl");
  dataset.general = load_qa("general.jsonl");
  dataset.calibration = load_qa("calibration.jsonl");

  for (const auto& row : read_jsonl(dir / "mc.jsonl")) {
    McRecord record;
    record.subject = row.at("subject").get<std::string>();
    record.question = row.at("question").get<std::string>();
    const auto choices = row.at("choices").get<std::vector<std::string>>();
    if (choices.size() != 4) {
      throw std::runtime_error("mc.jsonl: record must have exactly 4 choices");
    }
    std::copy(choices.begin(), choices.end(), record.choices.begin());
    record.gold = row.at("gold").get<int>();
    if (record.gold < 0 || record.gold > 3) {
      throw std::runtime_error("mc.jsonl: gold index out of range");
    }
    dataset.mc.push_back(std::move(record));
  }

  const auto load_table = [&](const char* name) {
    backend::KnowledgeTable table;
    for (const auto& row : read_jsonl(dir / name)) {
      table.add(row.at("key").get<std::string>(),
                row.at("answer").get<std::string>());
    }
    return table;
  };
  dataset.original_table = load_table("knowledge_original.jsonl");
  dataset.retained_table = load_table("knowledge_retained.jsonl");

  std::uint64_t fp = 0xcbf29ce484222325ULL;
  for (const char* name :
       {"forget.jsonl", "retain.jsonl", "retain_heldout.jsonl",
        "real_authors.jsonl", "world_facts.jsonl", "general.jsonl",
        "calibration.jsonl", "mc.jsonl", "knowledge_original.jsonl",
        "knowledge_retained.jsonl", "manifest.json"}) {
    std::ifstream in(dir / name, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    fp = text::fnv1a(bytes, fp);
  }
  dataset.fingerprint = text::hex64(fp);
  return dataset;
}

std::vector<gate::LabeledScore> calibration_scores(
    const Dataset& dataset, const gate::PromptScorer& scorer) {
  std::vector<gate::LabeledScore> scores;
  scores.reserve(dataset.calibration.size());
  for (const auto& record : dataset.calibration) {
    scores.push_back({scorer.score(record.question), record.forget_scope});
  }
  return scores;
}

}  // namespace eco::harness
