// Push-to-talk microphone capture on MediaRecorder. When the microphone is
// unavailable or denied the console switches to text-input fallback; the
// session protocol accepts either.

export async function micPermission(): Promise<"granted" | "denied"> {
  try {
    const stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    stream.getTracks().forEach((t) => t.stop());
    return "granted";
  } catch {
    return "denied";
  }
}

export class HoldRecorder {
  private recorder: MediaRecorder | null = null;
  private chunks: Blob[] = [];

  get active(): boolean {
    return this.recorder !== null;
  }

  async start(): Promise<void> {
    if (this.recorder) return;
    const stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    this.chunks = [];
    const recorder = new MediaRecorder(stream, { mimeType: "audio/webm" });
    recorder.ondataavailable = (ev: BlobEvent) => {
      if (ev.data.size > 0) this.chunks.push(ev.data);
    };
    recorder.start(250);
    this.recorder = recorder;
  }

  /** Stop capturing and hand back the whole hold as one blob. */
  async stop(): Promise<Blob> {
    const recorder = this.recorder;
    if (!recorder) return new Blob([], { type: "audio/webm" });
    this.recorder = null;
    await new Promise<void>((resolve) => {
      recorder.onstop = () => resolve();
      recorder.stop();
    });
    recorder.stream.getTracks().forEach((t) => t.stop());
    return new Blob(this.chunks, { type: "audio/webm" });
  }
}

export async function blobToBase64(blob: Blob): Promise<string> {
  const buffer = await blob.arrayBuffer();
  return bytesToBase64(new Uint8Array(buffer));
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}
