// Writes the synthetic toy corpus: about ten minutes of "Indonesian" tone
// bursts in six channels plus one English video, a truth file with word
// timings for the mock backend, and a pipeline config wired to it.

#include <cmath>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gsb/audio.hpp"
#include "gsb/mock_backends.hpp"

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kIndonesian = {
    "saya",    "kamu",   "kita",    "mereka",  "ini",     "itu",     "ada",     "tidak",   "bisa",   "akan",
    "sudah",   "belum",  "sangat",  "banyak",  "sedikit", "rumah",   "jalan",   "kota",    "desa",   "pasar",
    "makan",   "minum",  "nasi",    "goreng",  "sayur",   "buah",    "air",     "teh",     "kopi",   "gula",
    "pagi",    "siang",  "sore",    "malam",   "hari",    "minggu",  "bulan",   "tahun",   "waktu",  "besok",
    "orang",   "anak",   "ibu",     "bapak",   "teman",   "keluarga", "guru",   "murid",   "sekolah", "kantor",
    "kerja",   "belajar", "membaca", "menulis", "bermain", "berjalan", "melihat", "mendengar", "bicara", "tanya",
    "baik",    "buruk",  "besar",   "kecil",   "baru",    "lama",    "panas",   "dingin",  "cepat",  "pelan",
    "hujan",   "cerah",  "angin",   "laut",    "gunung",  "sungai",  "pantai",  "pulau",   "hutan",  "sawah",
    "harga",   "uang",   "murah",   "mahal",   "beli",    "jual",    "toko",    "barang",  "pasti",  "mungkin",
    "karena",  "jadi",   "tetapi",  "atau",    "dan",     "dengan",  "untuk",   "dari",    "ke",     "di",
    "cerita",  "berita", "musik",   "lagu",    "film",    "buku",    "gambar",  "warna",   "merah",  "biru",
    "sehat",   "sakit",  "dokter",  "obat",    "olahraga", "bola",   "menang",  "kalah",   "tim",    "pemain",
};

const std::vector<std::string> kEnglish = {
    "the",  "quick", "brown", "fox",   "jumps",  "over",  "lazy",  "dog",  "today", "we",    "talk",
    "about", "new",  "ideas", "for",   "better", "sound", "with",  "some", "simple", "words", "and",
};

const std::vector<std::string> kIntro = {"halo", "semua", "selamat", "datang", "di", "kanal", "kami"};

struct ChannelPlan {
  std::string name;
  std::string topic;
  std::string format;
  int videos;
  double video_s;
};

struct Builder {
  gsb::SplitMix64 rng;
  gsb::mock::VideoTruth truth;
  double t = 0.4;

  static double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

  void word(const std::string& w) {
    const double d = 0.12 + 0.07 * static_cast<double>(gsb::utf8_to_u32(w).size());
    truth.words.push_back({w, round3(t), round3(t + d)});
    t = round3(t + d + 0.08 + 0.12 * rng.uniform());
  }

  void utterance(const std::vector<std::string>& ws) {
    for (const auto& w : ws) word(w);
    t = round3(t + 0.7 + 0.6 * rng.uniform());
  }

  std::vector<std::string> random_words(const std::vector<std::string>& vocab, int lo, int hi) {
    const auto n = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    std::vector<std::string> ws;
    for (int i = 0; i < n; ++i) ws.push_back(vocab[rng.below(vocab.size())]);
    return ws;
  }
};

gsb::AudioBuffer render(const gsb::mock::VideoTruth& v, double duration_s) {
  gsb::AudioBuffer b;
  b.samples.assign(static_cast<std::size_t>(duration_s * b.sample_rate_hz), 0.0f);
  for (const auto& w : v.words) {
    const double f = 180.0 + static_cast<double>(gsb::fnv1a64(w.text) % 600);
    const auto s0 = static_cast<std::size_t>(w.start_s * b.sample_rate_hz);
    const auto s1 = std::min(b.samples.size(), static_cast<std::size_t>(w.end_s * b.sample_rate_hz));
    for (std::size_t i = s0; i < s1; ++i) {
      const double x = static_cast<double>(i - s0) / static_cast<double>(s1 - s0);
      const double env = std::sin(std::numbers::pi * x);
      b.samples[i] = static_cast<float>(0.3 * env * std::sin(2.0 * std::numbers::pi * f * i / b.sample_rate_hz));
    }
  }
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generate the synthetic toy corpus"};
  fs::path out;
  std::string backend;
  std::uint64_t seed = 7;
  double eps = 0.03;
  app.add_option("out", out, "output directory")->required();
  app.add_option("--backend", backend, "path of the mock backend executable")->required();
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--eps", eps, "first-pass character error rate for the mock transcriber");
  CLI11_PARSE(app, argc, argv);

  try {
    out = fs::absolute(out).lexically_normal();
    const fs::path backend_path = fs::absolute(backend).lexically_normal();
    fs::create_directories(out / "audio");

    const std::vector<ChannelPlan> plan = {
        {"berita_kini", "Politics", "News", 2, 50.0},      {"dapur_ibu", "Culture", "Vlog", 2, 52.0},
        {"sains_seru", "Education", "Lecture", 2, 48.0},   {"bola_kita", "Sport", "Commentary", 2, 55.0},
        {"jelajah_nusa", "Travel", "Vlog", 2, 45.0},       {"lagu_lama", "Music", "Talk", 2, 50.0},
        {"english_hour", "Education", "Talk", 1, 40.0},
    };

    std::vector<gsb::mock::VideoTruth> truths;
    double total_s = 0.0;
    for (const auto& ch : plan) {
      const fs::path dir = out / "audio" / ch.name;
      fs::create_directories(dir);
      gsb::write_file_atomic(dir / "channel.json",
                             fmt::format("{{\"topic\": \"{}\", \"format\": \"{}\"}}\n", ch.topic, ch.format));
      const bool english = ch.name == "english_hour";
      for (int k = 1; k <= ch.videos; ++k) {
        Builder b{gsb::SplitMix64(gsb::mix_seed(seed, ch.name + std::to_string(k))), {}};
        b.truth.video = fmt::format("{}_{:02d}", ch.name, k);
        b.truth.language = english ? "en" : "id";
        const double limit = ch.video_s - 4.0;
        int n = 0;
        while (b.t < limit) {
          if (english) {
            b.utterance(b.random_words(kEnglish, 5, 10));
            continue;
          }
          // the channel intro recurs three times per video and the music
          // channel repeats a chorus, which the duplicate cap trims
          if (ch.name == "lagu_lama" && n % 2 == 1) {
            b.utterance({"ayo", "kita", "bernyanyi", "bersama"});
          } else if (n % 4 == 0 && n < 12) {
            b.utterance(kIntro);
          } else if (n == 2) {
            auto ws = b.random_words(kIndonesian, 3, 5);
            ws.insert(ws.end(), {"pada", "tahun", "2024"});
            b.utterance(ws);
          } else if (n == 5) {
            b.utterance({"oke", "terima", "kasih."});
          } else if (n == 6 && k == 1) {
            b.utterance({"kami", "minum", "kopi", "di", "café", "itu"});
          } else if (n == 7) {
            auto ws = b.random_words(kIndonesian, 4, 8);
            ws.back() += ",";
            auto more = b.random_words(kIndonesian, 2, 4);
            ws.insert(ws.end(), more.begin(), more.end());
            b.utterance(ws);
          } else if (n == 9) {
            b.utterance({"ada", "17", "orang", "di", "sini"});
          } else {
            b.utterance(b.random_words(kIndonesian, 4, 11));
          }
          ++n;
        }
        gsb::write_wav(dir / (b.truth.video + ".wav"), render(b.truth, ch.video_s));
        total_s += ch.video_s;
        truths.push_back(std::move(b.truth));
      }
    }
    const auto index = gsb::mock::TruthIndex::from_videos(std::move(truths));
    gsb::write_file_atomic(out / "truth.jsonl", index.serialize());

    const std::string cmd = fmt::format("{} --truth {} --profile id --eps {} --alpha 0.7 --seed 1", backend_path.string(),
                                        (out / "truth.jsonl").string(), eps);
    std::string ini = fmt::format(R"([corpus]
language = id

[paths]
audio_root = audio
work_dir = work

[backends]
transcriber = {0}
trainer = {0}
lid = {0}
backoff_ms = 20

[filter]
lid_threshold = 0.75

[partition]
dev_hours = 0.0145
test_hours = 0.0128
seed = 1

[refine]
n = 3
tau = 0.10
relabel = true
noise_config = specaugment=on;dropout=0.1
capacities = M
seed = 1
)",
                                  cmd);
    gsb::write_file_atomic(out / "toy.ini", ini);
    std::cout << fmt::format("wrote {} s of audio in {} channels to {}\n", total_s, plan.size(), out.string());
  } catch (const std::exception& e) {
    std::cerr << "gsb_make_toy: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
