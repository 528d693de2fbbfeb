#include "tact/stream.hpp"

#include <chrono>

#include "tact/errors.hpp"

namespace tact::stream {

StreamClassifier::StreamClassifier(model::Model<float> m, std::size_t window,
                                   std::size_t emit_every)
    : model_(std::move(m)), window_(window), emit_every_(emit_every) {
    if (window_ == 0) throw format_error("stream: window must be >= 1");
    if (emit_every_ == 0) throw format_error("stream: emit_every must be >= 1");
    ring_ = TensorF({window_, model_.config.d_model});
}

void StreamClassifier::ingest(const StreamTick& tick) {
    const auto& mask = model_.config.input_mask;
    const bool need_frames = mask.s1_flow || mask.s2_flow;

    if (need_frames && pool_factor_ == 0) {
        if (tick.s1.height % flow::kPooledRows != 0 || tick.s1.width % flow::kPooledCols != 0 ||
            tick.s1.height / flow::kPooledRows != tick.s1.width / flow::kPooledCols)
            throw shape_error("stream: frame resolution " + std::to_string(tick.s1.height) + "x" +
                              std::to_string(tick.s1.width) +
                              " is not a multiple of the 96x128 grid");
        pool_factor_ = tick.s1.height / flow::kPooledRows;
    }

    // the first tick only primes the stream; steps start at the second.
    // like the preprocessing path, a step carries the EARLIER tick's wrench
    // and joint samples alongside the flow into the current tick
    const bool have_prev = primed_;
    data::ModelInputSequence seq;
    if (have_prev) {
        seq.label = 0;
        seq.length = 1;
        auto pooled_channels = [&](const flow::Frame& prev, const flow::Frame& cur) {
            const flow::PooledFlow pf =
                flow::pool_flow(flow::farneback_flow(prev, cur), pool_factor_);
            const std::size_t ch = model_.config.flow_channels();
            TensorF t({ch, pf.grid_h, pf.grid_w});
            std::copy(pf.magnitude.begin(), pf.magnitude.end(), t.ptr());
            if (ch == 2)
                std::copy(pf.direction.begin(), pf.direction.end(),
                          t.ptr() + pf.grid_h * pf.grid_w);
            return t;
        };
        if (mask.s1_flow) seq.s1_flow.push_back(pooled_channels(*prev_s1_, tick.s1));
        if (mask.s2_flow) seq.s2_flow.push_back(pooled_channels(*prev_s2_, tick.s2));
        if (mask.wrench) seq.wrench.push_back(prev_wrench_);
        if (mask.joints) seq.joints.push_back(prev_joints_);

        nn::StepContext ctx;  // eval mode
        const TensorF row =
            model_.forward_features(model::SeqInput<float>::from(seq), ctx);
        std::copy(row.data.begin(), row.data.end(),
                  ring_.ptr() + next_slot_ * model_.config.d_model);
        next_slot_ = (next_slot_ + 1) % window_;
        if (rows_filled_ < window_) ++rows_filled_;
    }
    if (need_frames) {
        prev_s1_ = tick.s1;
        prev_s2_ = tick.s2;
    }
    prev_wrench_ = tick.wrench;
    prev_joints_ = tick.joints;
    primed_ = true;
}

Emission StreamClassifier::classify(double stream_time, std::size_t tick_index) {
    Emission e;
    e.stream_time = stream_time;
    e.tick_index = tick_index;
    if (rows_filled_ < window_) {
        e.warming_up = true;
        return e;
    }
    const auto t0 = std::chrono::steady_clock::now();
    // chronological window: oldest row first
    TensorF feats({window_, model_.config.d_model});
    for (std::size_t i = 0; i < window_; ++i) {
        const std::size_t slot = (next_slot_ + i) % window_;
        std::copy(ring_.ptr() + slot * model_.config.d_model,
                  ring_.ptr() + (slot + 1) * model_.config.d_model,
                  feats.ptr() + i * model_.config.d_model);
    }
    nn::StepContext ctx;
    const auto out = model_.classify_features(feats, ctx);
    e.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t i = 0; i < 4 && i < out.probs.numel(); ++i) e.probs[i] = out.probs.data[i];
    int best = 0;
    for (int i = 1; i < static_cast<int>(out.probs.numel()); ++i)
        if (out.probs.data[static_cast<std::size_t>(i)] >
            out.probs.data[static_cast<std::size_t>(best)])
            best = i;
    e.predicted = best;
    return e;
}

std::optional<Emission> StreamClassifier::push(const StreamTick& tick) {
    ingest(tick);
    ++ticks_;
    if (ticks_ % emit_every_ != 0) return std::nullopt;
    return classify(tick.t, ticks_ - 1);
}

// ------------------------------------------------------------------- async

AsyncStreamClassifier::AsyncStreamClassifier(model::Model<float> m, std::size_t window,
                                             std::size_t emit_every)
    : sync_(std::move(m), window, emit_every) {
    worker_ = std::thread([this] { worker_loop(); });
}

AsyncStreamClassifier::~AsyncStreamClassifier() {
    finish();
}

void AsyncStreamClassifier::push(const StreamTick& tick) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        if (stopping_) return;
        queue_.push_back(tick);
    }
    cv_.notify_one();
}

void AsyncStreamClassifier::finish() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        if (stopping_) {
            if (worker_.joinable()) worker_.join();
            return;
        }
        stopping_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) worker_.join();
}

std::vector<Emission> AsyncStreamClassifier::take_emissions() {
    std::lock_guard<std::mutex> lk(mu_);
    std::vector<Emission> out;
    out.swap(emissions_);
    return out;
}

void AsyncStreamClassifier::worker_loop() {
    for (;;) {
        std::deque<StreamTick> batch;
        {
            std::unique_lock<std::mutex> lk(mu_);
            cv_.wait(lk, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty() && stopping_) return;
            batch.swap(queue_);
        }
        // ingest everything that queued up; classify only the newest window
        std::size_t due = 0;
        double last_t = 0;
        std::size_t last_idx = 0;
        for (const auto& tick : batch) {
            sync_.ingest(tick);
            ++sync_.ticks_;
            if (sync_.ticks_ % sync_.emit_every_ == 0) {
                ++due;
                last_t = tick.t;
                last_idx = sync_.ticks_ - 1;
            }
        }
        if (due > 0) {
            Emission e = sync_.classify(last_t, last_idx);
            std::lock_guard<std::mutex> lk(mu_);
            dropped_ += due - 1;
            emissions_.push_back(e);
        }
    }
}

}  // namespace tact::stream
