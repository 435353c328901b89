#include "rlcf/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "rlcf/error.hpp"
#include "rlcf/text.hpp"

namespace rlcf {

namespace {

using Pool = std::vector<std::string>;

const Pool kMarkets = {
    "philippine", "japanese",  "thai",      "indonesian", "malaysian", "singapore", "korean",
    "taiwan",     "indian",    "chinese",   "hong-kong",  "australian", "german",   "french",
    "british",    "spanish",   "italian",   "swiss",      "dutch",     "swedish",   "norwegian",
    "danish",     "finnish",   "polish",    "russian",    "turkish",   "brazilian", "mexican",
    "argentine",  "chilean",   "canadian",  "american",   "african",   "egyptian",  "saudi",
    "israeli",    "vietnamese", "pakistani", "greek",     "irish"};
const Pool kSectors = {"banking", "mining",  "property", "telecom",  "energy", "retail",
                       "technology", "airline", "insurance", "shipping", "utility", "auto"};
const Pool kCauses = {
    "profit-taking",    "inflation-worries", "rate-fears",       "weak-earnings",
    "oil-slump",        "currency-weakness", "trade-tensions",   "election-jitters",
    "bond-selloff",     "tax-concerns",      "export-slowdown",  "credit-downgrade",
    "merger-news",      "strong-earnings",   "rate-cut-hopes",   "stimulus-hopes",
    "bargain-hunting",  "fund-inflows",      "fund-outflows",    "budget-deficit",
    "strike-action",    "regulatory-probe",  "commodity-rally",  "debt-worries",
    "growth-data",      "jobs-report",       "housing-data",     "central-bank-talk",
    "dividend-payouts", "index-rebalancing", "holiday-lull",     "margin-calls"};
const Pool kCompanies = {
    "acme",     "borealis", "cardinal", "dynamo",  "everest", "falcon",   "granite", "helix",
    "ironwood", "jupiter",  "kestrel",  "lumen",   "meridian", "nimbus",  "orion",   "pinnacle",
    "quasar",   "redwood",  "summit",   "titan",   "umbra",    "vertex",  "willow",  "xenon",
    "yarrow",   "zenith",   "apex",     "beacon",  "cobalt",   "delta",   "ember",   "fjord"};
const Pool kPartners = {
    "atlas",   "bastion", "cypress", "dorado", "eclipse", "fortis", "gemini", "harbor",
    "indigo",  "jasper",  "keystone", "lotus", "mosaic",  "nova",   "onyx",   "paragon",
    "quill",   "raven",   "sierra",  "tundra", "unity",   "vanguard", "wharf", "yukon"};
const Pool kExchanges = {"main", "secondary", "growth", "premier", "junior", "regional",
                         "national", "central", "western", "eastern", "northern", "southern",
                         "composite", "select", "prime", "venture"};
const Pool kMonths = {"january", "february", "march",     "april",   "may",      "june",
                      "july",    "august",   "september", "october", "november", "december"};

const Pool kCities = {
    "manila",   "tokyo",    "bangkok",  "jakarta",   "seoul",     "taipei",    "mumbai",  "beijing",
    "sydney",   "berlin",   "paris",    "london",    "madrid",    "rome",      "zurich",  "amsterdam",
    "oslo",     "helsinki", "warsaw",   "moscow",    "istanbul",  "cairo",     "riyadh",  "lima",
    "santiago", "toronto",  "chicago",  "denver",    "nairobi",   "lagos",     "dublin",  "athens",
    "lisbon",   "vienna",   "prague",   "budapest",  "hanoi",     "karachi",   "dhaka",   "perth"};
const Pool kConditions = {"sunny", "cloudy", "overcast", "clear", "hazy",
                          "stormy", "rainy", "foggy",   "grey",  "bright"};
const Pool kWinds = {"northerly",      "southerly",      "easterly",       "westerly",
                     "north-easterly", "north-westerly", "south-easterly", "south-westerly",
                     "gusty",          "light",          "variable",       "blustery"};
const Pool kStations = {"harbour", "airport", "hilltop", "valley", "coastal", "university",
                         "riverside", "downtown", "lakeside", "summit", "park", "observatory",
                         "marina", "forest", "mesa", "bayside"};
const Pool kAdvisories = {"heat", "flood", "frost", "smog", "pollen", "uv",
                          "drought", "surf", "dust", "ice", "wildfire", "visibility"};
const Pool kDistricts = {"northgate", "southbank", "eastfield", "westmoor", "oldtown", "newport",
                         "highcliff", "lowmead", "greenway", "stonebridge", "millbrook", "ashford",
                         "redhill", "bluewater", "kingsway", "queensway", "fairview", "elmwood",
                         "oakridge", "pinecrest"};
const Pool kRivers = {"amber", "silver", "crooked", "willow", "stony", "swift", "black", "white",
                      "long", "bright", "cold", "red", "north", "mill", "deer", "fox"};
const Pool kHours = {"5am", "6am", "7am", "8am", "9am", "10am", "11am",
                     "noon", "1pm", "2pm", "3pm", "4pm", "5pm", "6pm"};

Pool numeric_pool(int lo, int hi, std::string_view suffix = {}) {
  Pool out;
  for (int v = lo; v <= hi; ++v) out.push_back(std::to_string(v) + std::string(suffix));
  return out;
}

Pool date_pool() {
  Pool out;
  for (const auto& m : kMonths) {
    for (int d = 1; d <= 28; ++d) out.push_back(m + "-" + std::to_string(d));
  }
  return out;
}

// Draws k distinct entries from the pool, in draw order.
Pool draw_distinct(const Pool& pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<size_t> idx(pool.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Pool out;
  for (size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

struct Family {
  std::string name;
  // Cluster-level slot pools; combinations are drawn without replacement.
  std::vector<const Pool*> cluster_pools;
  std::vector<Pool> doc_pools;
  std::string (*render)(const Pool& cluster_slots, const Pool& doc_slots);
};

std::string render_stock(const Pool& c, const Pool& d) {
  const bool down = c[1] == "lower";
  return c[0] + " stocks closed " + c[1] + " on " + d[0] + " as " + d[1] + " weighed on " + c[2] +
         " shares . " + c[3] + " and " + c[4] + " led the " + c[5] + " board while the benchmark index " +
         (down ? "fell " : "rose ") + d[2] + " points to " + d[3] + " .";
}

std::string render_weather(const Pool& c, const Pool& d) {
  return c[0] + " weather for " + d[0] + " : " + c[1] + " skies with a high of " + d[1] +
         " degrees and " + d[2] + " winds of " + d[3] + " expected by " + d[4] + " . the " + c[2] + " station issued a " + c[3] +
         " advisory for the " + c[4] + " district along the " + c[5] + " river .";
}

const Pool kDirections = {"lower", "higher"};

const std::vector<Family>& families() {
  static const std::vector<Family> registry = {
      {"stock-report",
       {&kMarkets, &kDirections, &kSectors, &kCompanies, &kPartners, &kExchanges},
       {date_pool(), kCauses, numeric_pool(10, 99), numeric_pool(1000, 9999)},
       &render_stock},
      {"weather-report",
       {&kCities, &kConditions, &kStations, &kAdvisories, &kDistricts, &kRivers},
       {date_pool(), numeric_pool(0, 45, "c"), kWinds, numeric_pool(5, 80, "kmh"), kHours},
       &render_weather},
  };
  return registry;
}

const Family& find_family(std::string_view name) {
  for (const auto& f : families()) {
    if (f.name == name) return f;
  }
  std::string names;
  for (const auto& f : families()) names += (names.empty() ? "" : ", ") + f.name;
  throw Error(ErrorKind::kConfig,
              "unknown template family '" + std::string(name) + "'; registered: " + names);
}

}  // namespace

std::vector<std::string> registered_families() {
  std::vector<std::string> out;
  for (const auto& f : families()) out.push_back(f.name);
  return out;
}

SynthCorpus synth_corpus(std::string_view family_name, std::size_t n_groups,
                         std::size_t group_width, std::uint64_t seed) {
  const Family& family = find_family(family_name);
  if (n_groups == 0 || group_width == 0) throw Error("n_groups and group_width must be positive");

  size_t combos = 1;
  for (const Pool* p : family.cluster_pools) combos *= p->size();
  if (n_groups > combos) {
    throw Error("family '" + family.name + "' supports at most " + std::to_string(combos) +
                " clusters");
  }
  for (const auto& pool : family.doc_pools) {
    if (group_width > pool.size()) {
      throw Error("family '" + family.name + "' supports group_width <= " +
                  std::to_string(pool.size()));
    }
  }

  std::mt19937_64 rng(seed);
  // Mixed-radix index over cluster slot combinations, drawn without replacement.
  std::set<size_t> used;
  SynthCorpus out;
  for (size_t g = 0; g < n_groups; ++g) {
    size_t code = 0;
    do {
      code = std::uniform_int_distribution<size_t>(0, combos - 1)(rng);
    } while (!used.insert(code).second);

    Pool cluster_slots;
    for (const Pool* p : family.cluster_pools) {
      cluster_slots.push_back((*p)[code % p->size()]);
      code /= p->size();
    }
    std::vector<Pool> per_slot;
    for (const auto& pool : family.doc_pools) per_slot.push_back(draw_distinct(pool, group_width, rng));

    const std::string cluster_id = family.name + "-c" + std::to_string(g);
    for (size_t m = 0; m < group_width; ++m) {
      Pool doc_slots;
      for (const auto& s : per_slot) doc_slots.push_back(s[m]);
      const std::string id = cluster_id + "-d" + std::to_string(m);
      out.records.push_back({id, family.render(cluster_slots, doc_slots)});
      out.gold.push_back({id, cluster_id, doc_slots});
    }
  }
  return out;
}

std::string reference_response(std::string_view family, std::string_view normalized_text,
                               bool with_detail) {
  const auto words = split_words(normalized_text);
  auto word = [&](size_t i) -> const std::string& {
    if (i >= words.size()) throw Error("document does not match the '" + std::string(family) + "' template");
    return words[i];
  };
  if (family == "stock-report") {
    // <market> stocks closed <direction> on <date> as <cause> ...
    std::string out = word(0) + " stocks close " + word(3);
    if (with_detail) out += " on " + word(7);
    return out;
  }
  if (family == "weather-report") {
    // <city> weather for <date> : <condition> skies with a high of <t> degrees and <wind> winds ...
    std::string out = word(0) + " weather " + word(5);
    if (with_detail) out += " with " + word(14) + " winds";
    return out;
  }
  find_family(family);
  return {};
}

bool reference_includes_detail(std::string_view doc_id, std::uint64_t seed, double rate) {
  std::uint64_t h = fnv1a64(doc_id, 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL));
  // FNV leaves the high bits poorly mixed on short keys.
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<double>(h >> 11) * 0x1.0p-53 < rate;
}

void save_gold(const std::vector<GoldAnnotation>& gold, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write gold file " + path.string());
  for (const auto& g : gold) {
    out << nlohmann::json{{"id", g.id},
                          {"cluster_id", g.cluster_id},
                          {"distinguishing_tokens", g.distinguishing_tokens}}
               .dump()
        << '\n';
  }
}

std::vector<GoldAnnotation> load_gold(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open gold file " + path.string());
  std::vector<GoldAnnotation> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("cluster_id").get<std::string>(),
                     j.at("distinguishing_tokens").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed gold record: " + e.what());
    }
  }
  return out;
}

}  // namespace rlcf
