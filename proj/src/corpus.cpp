#include "medcoder/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace medcoder {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// RFC-4180-ish CSV: quoted fields may contain commas, newlines and "" escapes.
std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  std::size_t i = 0;
  const std::size_t n = content.size();
  auto end_field = [&] { row.push_back(std::move(field)); field.clear(); };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (i < n) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field.push_back(c);
    }
    ++i;
  }
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

Table read_table(const fs::path& dir, const std::string& name,
                 const std::vector<std::string>& required_cols,
                 IngestSummary& summary) {
  const fs::path path = dir / (name + ".csv");
  std::ifstream f(path);
  if (!f) throw DataError("load_tables: missing required file " + path.string());
  std::string content((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
  auto rows = parse_csv(content);
  if (rows.empty()) throw DataError("load_tables: " + name + " has no header row");
  Table t;
  t.header = rows.front();
  rows.erase(rows.begin());
  for (const auto& c : required_cols)
    if (t.col(c) < 0)
      throw DataError("load_tables: " + name + " lacks required column " + c);
  // Short rows are malformed; keep the rest.
  for (auto& r : rows) {
    if (r.size() < t.header.size()) {
      ++summary.malformed_rows;
      continue;
    }
    t.rows.push_back(std::move(r));
  }
  summary.rows_per_table[name] = static_cast<long>(t.rows.size());
  return t;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

int CodeCatalog::index_of(const std::string& code) const {
  for (int j = 0; j < size(); ++j)
    if (codes[static_cast<std::size_t>(j)].code == code) return j;
  return -1;
}

std::string CodeCatalog::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "code_catalog";
  json arr = json::array();
  for (const auto& c : codes)
    arr.push_back({{"code", c.code}, {"description", c.description}, {"synonyms", c.synonyms}});
  j["codes"] = std::move(arr);
  return j.dump(2);
}

CodeCatalog CodeCatalog::from_json(const std::string& text) {
  const json j = json::parse(text);
  CodeCatalog cat;
  std::set<std::string> seen;
  for (const auto& e : j.at("codes")) {
    CodeEntry c;
    c.code = e.at("code").get<std::string>();
    c.description = e.at("description").get<std::string>();
    if (e.contains("synonyms")) c.synonyms = e.at("synonyms").get<std::vector<std::string>>();
    if (!seen.insert(c.code).second)
      throw DataError("CodeCatalog: duplicate code " + c.code);
    if (c.description.empty())
      throw DataError("CodeCatalog: empty description for " + c.code);
    cat.codes.push_back(std::move(c));
  }
  return cat;
}

CodeCatalog CodeCatalog::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("CodeCatalog::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void CodeCatalog::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("CodeCatalog::save: cannot open " + path);
  f << to_json();
}

bool AdmissionRecord::operator==(const AdmissionRecord& o) const {
  return admission_id == o.admission_id && patient_id == o.patient_id &&
         notes == o.notes && diagnosis_phrases == o.diagnosis_phrases &&
         lab_events == o.lab_events && chart_events == o.chart_events &&
         medications == o.medications && micro_events == o.micro_events &&
         labels.size() == o.labels.size() && labels == o.labels;
}

std::vector<AdmissionRecord> load_tables(const std::string& directory,
                                         const CodeCatalog& catalog,
                                         IngestSummary* summary_out) {
  IngestSummary summary;
  const fs::path dir(directory);

  const Table admissions =
      read_table(dir, "ADMISSIONS", {"HADM_ID", "SUBJECT_ID", "DIAGNOSIS"}, summary);
  const Table notes = read_table(dir, "NOTEEVENTS", {"HADM_ID", "CATEGORY", "TEXT"}, summary);
  const Table labs = read_table(dir, "LABEVENTS", {"HADM_ID", "ITEMID", "FLAG"}, summary);
  const Table meds = read_table(dir, "PRESCRIPTIONS", {"HADM_ID", "DRUG"}, summary);
  const Table micro = read_table(dir, "MICROBIOLOGYEVENTS",
                                 {"HADM_ID", "ORG_ITEMID", "INTERPRETATION"}, summary);
  const Table charts = read_table(dir, "CHARTEVENTS", {"HADM_ID", "ITEMID", "VALUENUM"}, summary);
  const Table labels = read_table(dir, "LABELS", {"HADM_ID", "ICD10"}, summary);

  summary.admission_rows = static_cast<long>(admissions.rows.size());

  std::vector<AdmissionRecord> records;
  std::unordered_map<std::string, std::size_t> index;
  {
    const int c_hadm = admissions.col("HADM_ID");
    const int c_subj = admissions.col("SUBJECT_ID");
    const int c_diag = admissions.col("DIAGNOSIS");
    for (const auto& row : admissions.rows) {
      const std::string& hadm = row[static_cast<std::size_t>(c_hadm)];
      if (hadm.empty() || index.count(hadm)) {
        ++summary.admissions_dropped;
        continue;
      }
      AdmissionRecord rec;
      rec.admission_id = hadm;
      rec.patient_id = row[static_cast<std::size_t>(c_subj)];
      rec.labels = IntVector::Zero(catalog.size());
      // The preliminary diagnosis cell holds semicolon-separated phrases.
      std::stringstream ss(row[static_cast<std::size_t>(c_diag)]);
      std::string phrase;
      while (std::getline(ss, phrase, ';')) {
        while (!phrase.empty() && phrase.front() == ' ') phrase.erase(phrase.begin());
        while (!phrase.empty() && phrase.back() == ' ') phrase.pop_back();
        if (!phrase.empty()) rec.diagnosis_phrases.push_back(phrase);
      }
      index[hadm] = records.size();
      records.push_back(std::move(rec));
    }
  }
  if (records.empty()) throw DataError("load_tables: zero admissions in " + directory);
  summary.admissions_loaded = static_cast<long>(records.size());

  auto find_rec = [&](const std::string& hadm) -> AdmissionRecord* {
    auto it = index.find(hadm);
    if (it == index.end()) {
      ++summary.orphan_rows_dropped;
      return nullptr;
    }
    return &records[it->second];
  };

  {
    const int ch = notes.col("HADM_ID"), ct = notes.col("TEXT");
    for (const auto& row : notes.rows)
      if (auto* r = find_rec(row[static_cast<std::size_t>(ch)]))
        r->notes.push_back(row[static_cast<std::size_t>(ct)]);
  }
  {
    const int ch = labs.col("HADM_ID"), ci = labs.col("ITEMID"), cf = labs.col("FLAG");
    for (const auto& row : labs.rows)
      if (auto* r = find_rec(row[static_cast<std::size_t>(ch)]))
        r->lab_events.push_back({row[static_cast<std::size_t>(ci)],
                                 lower(row[static_cast<std::size_t>(cf)]) == "abnormal"});
  }
  {
    const int ch = meds.col("HADM_ID"), cd = meds.col("DRUG");
    for (const auto& row : meds.rows)
      if (auto* r = find_rec(row[static_cast<std::size_t>(ch)]))
        r->medications.push_back(row[static_cast<std::size_t>(cd)]);
  }
  {
    const int ch = micro.col("HADM_ID"), co = micro.col("ORG_ITEMID"),
              ci = micro.col("INTERPRETATION");
    for (const auto& row : micro.rows)
      if (auto* r = find_rec(row[static_cast<std::size_t>(ch)]))
        r->micro_events.push_back({row[static_cast<std::size_t>(co)],
                                   lower(row[static_cast<std::size_t>(ci)]) == "positive"});
  }
  {
    const int ch = charts.col("HADM_ID"), ci = charts.col("ITEMID"), cv = charts.col("VALUENUM");
    for (const auto& row : charts.rows) {
      auto* r = find_rec(row[static_cast<std::size_t>(ch)]);
      if (!r) continue;
      try {
        const double v = std::stod(row[static_cast<std::size_t>(cv)]);
        r->chart_events.push_back({row[static_cast<std::size_t>(ci)], v});
      } catch (const std::exception&) {
        ++summary.malformed_rows;
      }
    }
  }
  {
    const int ch = labels.col("HADM_ID"), cc = labels.col("ICD10");
    for (const auto& row : labels.rows) {
      auto* r = find_rec(row[static_cast<std::size_t>(ch)]);
      if (!r) continue;
      const int j = catalog.index_of(row[static_cast<std::size_t>(cc)]);
      if (j >= 0) r->labels[j] = 1;
    }
  }

  if (summary_out) *summary_out = summary;
  return records;
}

void write_tables(const std::string& directory, const CodeCatalog& catalog,
                  const std::vector<AdmissionRecord>& records) {
  const fs::path dir(directory);
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / (name + ".csv"), std::ios::binary);
    if (!f) throw DataError("write_tables: cannot open " + name);
    return f;
  };

  auto adm = open("ADMISSIONS");
  adm << "HADM_ID,SUBJECT_ID,DIAGNOSIS\n";
  auto note = open("NOTEEVENTS");
  note << "HADM_ID,CATEGORY,TEXT\n";
  auto lab = open("LABEVENTS");
  lab << "HADM_ID,ITEMID,FLAG\n";
  auto med = open("PRESCRIPTIONS");
  med << "HADM_ID,DRUG\n";
  auto mic = open("MICROBIOLOGYEVENTS");
  mic << "HADM_ID,ORG_ITEMID,INTERPRETATION\n";
  auto chart = open("CHARTEVENTS");
  chart << "HADM_ID,ITEMID,VALUENUM\n";
  auto lbl = open("LABELS");
  lbl << "HADM_ID,ICD10\n";

  for (const auto& r : records) {
    std::string diag;
    for (std::size_t i = 0; i < r.diagnosis_phrases.size(); ++i) {
      if (i) diag += "; ";
      diag += r.diagnosis_phrases[i];
    }
    adm << csv_quote(r.admission_id) << ',' << csv_quote(r.patient_id) << ','
        << csv_quote(diag) << '\n';
    for (const auto& n : r.notes)
      note << csv_quote(r.admission_id) << ",Discharge summary," << csv_quote(n) << '\n';
    for (const auto& e : r.lab_events)
      lab << csv_quote(r.admission_id) << ',' << csv_quote(e.test_id) << ','
          << (e.abnormal ? "abnormal" : "normal") << '\n';
    for (const auto& m : r.medications)
      med << csv_quote(r.admission_id) << ',' << csv_quote(m) << '\n';
    for (const auto& e : r.micro_events)
      mic << csv_quote(r.admission_id) << ',' << csv_quote(e.organism_id) << ','
          << (e.positive ? "positive" : "negative") << '\n';
    for (const auto& e : r.chart_events) {
      std::ostringstream v;
      v.precision(17);
      v << e.value;
      chart << csv_quote(r.admission_id) << ',' << csv_quote(e.measure_id) << ','
            << v.str() << '\n';
    }
    for (int j = 0; j < r.labels.size(); ++j)
      if (r.labels[j] == 1)
        lbl << csv_quote(r.admission_id) << ','
            << csv_quote(catalog.codes[static_cast<std::size_t>(j)].code) << '\n';
  }
}

std::string DatasetSplit::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "dataset_split";
  j["seed"] = seed;
  j["train"] = train;
  j["validation"] = validation;
  j["test"] = test;
  return j.dump(2);
}

DatasetSplit DatasetSplit::from_json(const std::string& text) {
  const json j = json::parse(text);
  DatasetSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

DatasetSplit split_by_patient(const std::vector<AdmissionRecord>& records,
                              const std::array<double, 3>& ratios,
                              std::uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9 || ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0)
    throw ConfigError("split_by_patient: ratios must be positive and sum to 1");

  std::map<std::string, std::vector<std::string>> by_patient;
  for (const auto& r : records) by_patient[r.patient_id].push_back(r.admission_id);
  if (by_patient.size() < 3)
    throw DataError("split_by_patient: fewer patients than splits");

  std::vector<std::string> patients;
  patients.reserve(by_patient.size());
  for (const auto& [p, _] : by_patient) patients.push_back(p);
  Rng rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);

  const double total = static_cast<double>(records.size());
  std::array<double, 3> target{ratios[0] * total, ratios[1] * total, ratios[2] * total};
  std::array<double, 3> count{0, 0, 0};
  DatasetSplit split;
  split.seed = seed;
  std::array<std::vector<std::string>*, 3> bucket{&split.train, &split.validation, &split.test};
  for (const auto& p : patients) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (target[static_cast<std::size_t>(k)] - count[static_cast<std::size_t>(k)] >
          target[static_cast<std::size_t>(best)] - count[static_cast<std::size_t>(best)])
        best = k;
    auto& adms = by_patient[p];
    for (auto& a : adms) bucket[static_cast<std::size_t>(best)]->push_back(a);
    count[static_cast<std::size_t>(best)] += static_cast<double>(adms.size());
  }
  return split;
}

CodeCatalog GeneratorConfig::catalog() const {
  CodeCatalog cat;
  for (const auto& c : codes) cat.codes.push_back({c.code, c.description, c.synonyms});
  return cat;
}

std::string GeneratorConfig::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "generator_config";
  j["admissions"] = admissions;
  j["patients"] = patients;
  j["p_diag"] = p_diag;
  j["p_signal"] = p_signal;
  j["background_flip"] = background_flip;
  j["note_tokens"] = note_tokens;
  j["noise_vocab"] = noise_vocab;
  json arr = json::array();
  for (const auto& c : codes) {
    arr.push_back({{"code", c.code},
                   {"description", c.description},
                   {"synonyms", c.synonyms},
                   {"keyword", c.keyword},
                   {"lab_features", c.lab_features},
                   {"med_features", c.med_features},
                   {"prevalence", c.prevalence}});
  }
  j["codes"] = std::move(arr);
  return j.dump(2);
}

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  GeneratorConfig g;
  g.admissions = j.at("admissions").get<int>();
  g.patients = j.value("patients", g.admissions);
  g.p_diag = j.value("p_diag", 0.95);
  g.p_signal = j.value("p_signal", 0.95);
  g.background_flip = j.value("background_flip", 0.03);
  g.note_tokens = j.value("note_tokens", 60);
  g.noise_vocab = j.value("noise_vocab", 150);
  for (const auto& e : j.at("codes")) {
    PlantedCode c;
    c.code = e.at("code").get<std::string>();
    c.description = e.at("description").get<std::string>();
    c.synonyms = e.value("synonyms", std::vector<std::string>{});
    c.keyword = e.at("keyword").get<std::string>();
    c.lab_features = e.value("lab_features", std::vector<std::string>{});
    c.med_features = e.value("med_features", std::vector<std::string>{});
    c.prevalence = e.value("prevalence", 0.3);
    g.codes.push_back(std::move(c));
  }
  return g;
}

GeneratorConfig GeneratorConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingDependencyError("GeneratorConfig::load: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::vector<AdmissionRecord> generate_synthetic(const GeneratorConfig& config,
                                                std::uint64_t seed) {
  if (config.codes.empty()) throw ConfigError("generate_synthetic: empty code list");
  if (config.admissions <= 0) throw ConfigError("generate_synthetic: zero admissions");

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> noise_tok(0, std::max(1, config.noise_vocab) - 1);
  std::uniform_int_distribution<int> patient_pick(0, std::max(1, config.patients) - 1);
  const int C = static_cast<int>(config.codes.size());

  std::vector<AdmissionRecord> out;
  out.reserve(static_cast<std::size_t>(config.admissions));
  for (int i = 0; i < config.admissions; ++i) {
    AdmissionRecord rec;
    {
      std::ostringstream a, p;
      a << "ADM" << 100000 + i;
      p << "PT" << 10000 + patient_pick(rng);
      rec.admission_id = a.str();
      rec.patient_id = p.str();
    }
    rec.labels = IntVector::Zero(C);
    for (int j = 0; j < C; ++j)
      rec.labels[j] = unif(rng) < config.codes[static_cast<std::size_t>(j)].prevalence ? 1 : 0;

    // Background note text, then planted keyword phrases spliced in.
    std::vector<std::string> words;
    for (int t = 0; t < config.note_tokens; ++t) {
      std::ostringstream w;
      w << "filler" << noise_tok(rng);
      words.push_back(w.str());
    }
    for (int j = 0; j < C; ++j) {
      const auto& pc = config.codes[static_cast<std::size_t>(j)];
      if (rec.labels[j] != 1 || pc.keyword.empty()) continue;
      std::uniform_int_distribution<std::size_t> pos(0, words.size());
      words.insert(words.begin() + static_cast<long>(pos(rng)), pc.keyword);
    }
    std::string note;
    for (std::size_t t = 0; t < words.size(); ++t) {
      if (t) note += ' ';
      note += words[t];
    }
    rec.notes.push_back(std::move(note));

    for (int j = 0; j < C; ++j) {
      const auto& pc = config.codes[static_cast<std::size_t>(j)];
      const bool positive = rec.labels[j] == 1;
      if (positive && !pc.synonyms.empty() && unif(rng) < config.p_diag) {
        std::uniform_int_distribution<std::size_t> pick(0, pc.synonyms.size() - 1);
        rec.diagnosis_phrases.push_back(pc.synonyms[pick(rng)]);
      }
      for (const auto& labf : pc.lab_features) {
        if (positive && unif(rng) < config.p_signal)
          rec.lab_events.push_back({labf, true});
        else if (unif(rng) < config.background_flip)
          rec.lab_events.push_back({labf, true});
        else if (unif(rng) < 0.5)
          rec.lab_events.push_back({labf, false});
      }
      for (const auto& medf : pc.med_features) {
        if (positive && unif(rng) < config.p_signal)
          rec.medications.push_back(medf);
        else if (unif(rng) < config.background_flip)
          rec.medications.push_back(medf);
      }
    }
    // Unplanted background events keep the tables realistic.
    rec.lab_events.push_back({"lab_sodium", unif(rng) < 0.2});
    rec.medications.push_back("med_saline_flush");
    rec.chart_events.push_back({"heart_rate", 55.0 + 80.0 * unif(rng)});
    rec.micro_events.push_back({"org_ecoli", unif(rng) < 0.3});
    out.push_back(std::move(rec));
  }
  return out;
}

GeneratorConfig default_synthetic_config() {
  GeneratorConfig g;
  g.admissions = 500;
  g.patients = 200;
  g.codes = {
      {"I10", "Essential (primary) hypertension",
       {"high blood pressure", "arterial hypertension", "essential hypertension"},
       "longstanding hypertensive disease",
       {"lab_renin"}, {"med_atenolol"}, 0.35},
      {"I50.9", "Heart failure, unspecified",
       {"congestive heart failure", "cardiac failure", "chf exacerbation"},
       "decompensated congestive failure",
       {"lab_troponin"}, {"med_furosemide"}, 0.30},
      {"N17.9", "Acute kidney failure, unspecified",
       {"acute kidney injury", "acute renal failure", "aki on ckd"},
       "oliguric renal insufficiency",
       {"lab_creatinine"}, {"med_bicarbonate"}, 0.30},
      {"E11.9", "Type 2 diabetes mellitus without complications",
       {"type two diabetes", "diabetes mellitus type ii", "adult onset diabetes"},
       "poorly controlled glycemia",
       {"lab_glucose"}, {"med_metformin"}, 0.30},
      {"D64.9", "Anemia, unspecified",
       {"chronic anemia", "low hemoglobin anemia", "normocytic anemia"},
       "symptomatic anemic syndrome",
       {"lab_hematocrit"}, {"med_iron_sulfate"}, 0.25},
  };
  return g;
}

}  // namespace medcoder
