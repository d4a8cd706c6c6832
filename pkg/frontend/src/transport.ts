/** Line-framed transports: the panel core only sees newline-delimited
 * JSON strings, so it runs unchanged over TCP (Node) or a websocket
 * bridge (browser). */

export interface Transport {
  send(line: string): void;
  close(): void;
  onLine(cb: (line: string) => void): void;
  onClose(cb: () => void): void;
}

/** Node TCP transport. Imported lazily so browser bundles never touch net. */
export async function connectTcp(host: string, port: number): Promise<Transport> {
  const net = await import("node:net");
  const socket: import("node:net").Socket = await new Promise((resolvePromise, reject) => {
    const s = net.createConnection({ host, port }, () => resolvePromise(s));
    s.on("error", reject);
  });
  socket.setNoDelay(true);

  let lineCb: (line: string) => void = () => {};
  let closeCb: () => void = () => {};
  let buffer = "";
  socket.on("data", (chunk: Buffer) => {
    buffer += chunk.toString("utf-8");
    let idx: number;
    while ((idx = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, idx);
      buffer = buffer.slice(idx + 1);
      if (line.trim().length > 0) lineCb(line);
    }
  });
  socket.on("close", () => closeCb());
  socket.on("error", () => socket.destroy());

  return {
    send: (line: string) => socket.write(line + "\n"),
    close: () => socket.destroy(),
    onLine: (cb) => {
      lineCb = cb;
    },
    onClose: (cb) => {
      closeCb = cb;
    },
  };
}

/** Browser websocket transport (expects the ws<->tcp bridge on the URL). */
export function connectWebSocket(url: string): Promise<Transport> {
  return new Promise((resolvePromise, reject) => {
    const ws = new WebSocket(url);
    let lineCb: (line: string) => void = () => {};
    let closeCb: () => void = () => {};
    ws.onopen = () =>
      resolvePromise({
        send: (line: string) => ws.send(line),
        close: () => ws.close(),
        onLine: (cb) => {
          lineCb = cb;
        },
        onClose: (cb) => {
          closeCb = cb;
        },
      });
    ws.onerror = () => reject(new Error(`websocket connect failed: ${url}`));
    ws.onmessage = (ev) => {
      for (const line of String(ev.data).split("\n")) {
        if (line.trim().length > 0) lineCb(line);
      }
    };
    ws.onclose = () => closeCb();
  });
}
