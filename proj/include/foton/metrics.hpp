#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "foton/common.hpp"
#include "foton/diagnostics.hpp"

namespace foton {

struct EpochMetrics {
    std::size_t epoch = 0; // 1-based; 0 is the pre-training evaluation
    double train_loss = 0.0, train_acc = 0.0;
    double test_loss = 0.0, test_acc = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct RunMetrics {
    std::string name;
    std::vector<EpochMetrics> epochs;
    std::vector<AlignmentRecord> alignment;
    double wall_seconds = 0.0;
    std::string error; // set when a grid cell failed

    double final_test_acc() const { return epochs.empty() ? 0.0 : epochs.back().test_acc; }

    // the headline number: test accuracy of the best epoch
    double best_test_acc() const {
        double best = 0.0;
        for (const auto &e : epochs) best = std::max(best, e.test_acc);
        return best;
    }
};

// Append-only JSONL event stream plus a CSV summary written at the end;
// the stream survives aborted runs.
class MetricsSink {
  public:
    MetricsSink() = default;

    explicit MetricsSink(const std::string &dir, const std::string &name) {
        if (dir.empty()) return;
        std::filesystem::create_directories(dir);
        path_ = dir + "/" + name + ".jsonl";
        csv_path_ = dir + "/" + name + ".csv";
        stream_.open(path_, std::ios::app);
        if (!stream_) throw DataError("cannot open metrics stream " + path_);
    }

    void epoch(const EpochMetrics &m) {
        if (!stream_.is_open()) return;
        nlohmann::json j{{"type", "epoch"},         {"epoch", m.epoch},
                         {"train_loss", m.train_loss}, {"train_acc", m.train_acc},
                         {"test_loss", m.test_loss},   {"test_acc", m.test_acc},
                         {"lr", m.lr},                 {"seconds", m.seconds}};
        stream_ << j.dump() << "\n";
        stream_.flush();
    }

    void alignment(const AlignmentRecord &r) {
        if (!stream_.is_open()) return;
        nlohmann::json j{{"type", "alignment"},
                         {"step", r.step},
                         {"layer", r.layer},
                         {"rule", r.rule},
                         {"cosine", r.cosine},
                         {"degenerate", r.degenerate_samples}};
        stream_ << j.dump() << "\n";
        stream_.flush();
    }

    void summary(const RunMetrics &m) {
        if (csv_path_.empty()) return;
        std::ofstream csv(csv_path_);
        csv << "epoch,train_loss,train_acc,test_loss,test_acc,lr,seconds\n";
        for (const auto &e : m.epochs)
            csv << e.epoch << "," << e.train_loss << "," << e.train_acc << "," << e.test_loss
                << "," << e.test_acc << "," << e.lr << "," << e.seconds << "\n";
    }

    const std::string &path() const { return path_; }

  private:
    std::string path_, csv_path_;
    std::ofstream stream_;
};

} // namespace foton
