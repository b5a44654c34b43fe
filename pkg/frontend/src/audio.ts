/**
 * Optional in-browser audification of the feedback tone commands.
 *
 * Off by default; when enabled it runs one oscillator whose frequency and
 * gain follow the streamed Tone events. Purely a local rendering choice,
 * with no effect on console state.
 */

export class ToneAudifier {
  private context: AudioContext | null = null;
  private oscillator: OscillatorNode | null = null;
  private gain: GainNode | null = null;
  private enabled = false;

  setEnabled(enabled: boolean): void {
    this.enabled = enabled;
    if (!enabled) {
      this.stop();
    }
  }

  setTone(frequencyHz: number, volume: number): void {
    if (!this.enabled) return;
    if (typeof AudioContext === "undefined") return;
    if (this.context === null) {
      this.context = new AudioContext();
      this.oscillator = this.context.createOscillator();
      this.gain = this.context.createGain();
      this.gain.gain.value = 0;
      this.oscillator.connect(this.gain);
      this.gain.connect(this.context.destination);
      this.oscillator.start();
    }
    const now = this.context.currentTime;
    this.oscillator!.frequency.setValueAtTime(frequencyHz, now);
    this.gain!.gain.linearRampToValueAtTime(clamp01(volume), now + 0.05);
  }

  silence(): void {
    if (this.gain !== null && this.context !== null) {
      this.gain.gain.linearRampToValueAtTime(0, this.context.currentTime + 0.05);
    }
  }

  private stop(): void {
    if (this.oscillator !== null) {
      this.oscillator.stop();
      this.oscillator.disconnect();
      this.oscillator = null;
    }
    if (this.gain !== null) {
      this.gain.disconnect();
      this.gain = null;
    }
    if (this.context !== null) {
      void this.context.close();
      this.context = null;
    }
  }
}

function clamp01(x: number): number {
  return Math.min(Math.max(x, 0), 1);
}
