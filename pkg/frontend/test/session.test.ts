import { describe, expect, it, vi } from "vitest";

import { ConsoleSession, SocketLike } from "../src/session.js";

class FakeSocket implements SocketLike {
    onopen: (() => void) | null = null;
    onmessage: ((ev: { data: unknown }) => void) | null = null;
    onclose: (() => void) | null = null;
    onerror: (() => void) | null = null;
    sent: string[] = [];

    send(data: string): void {
        this.sent.push(data);
    }

    close(): void {
        this.onclose?.();
    }

    // test controls
    open(): void {
        this.onopen?.();
    }

    receive(text: string): void {
        this.onmessage?.({ data: text });
    }

    drop(): void {
        this.onclose?.();
    }
}

function makeSession(options = {}) {
    const sockets: FakeSocket[] = [];
    const session = new ConsoleSession("ws://test/", () => {
        const socket = new FakeSocket();
        sockets.push(socket);
        return socket;
    }, { backoffMs: 5, maxBackoffMs: 20, ...options });
    return { session, sockets };
}

describe("ConsoleSession", () => {
    it("reaches connected once the socket opens", () => {
        const { session, sockets } = makeSession();
        session.connect();
        expect(session.state).toBe("connecting");
        sockets[0].open();
        expect(session.state).toBe("connected");
        session.close();
    });

    it("sends composed commands and echoes them in the log", () => {
        const { session, sockets } = makeSession();
        session.connect();
        sockets[0].open();
        session.sendCommand(1, { kind: "setWheelSpeed", rpm: 500 });
        expect(JSON.parse(sockets[0].sent[0])).toEqual(
            { dir: "up", id: "01", payload: "0201f4" });
        expect(session.log).toHaveLength(1);
        expect(session.log[0].dir).toBe("up");
        expect(session.log[0].payloadHex).toBe("0201f4");
        session.close();
    });

    it("rejects bad input without sending anything", () => {
        const { session, sockets } = makeSession();
        session.connect();
        sockets[0].open();
        expect(() => session.sendCommand(1, { kind: "raw", hex: "zz" })).toThrow();
        expect(sockets[0].sent).toHaveLength(0);
        expect(session.log).toHaveLength(0);
        session.close();
    });

    it("updates the wheel readout from downlink telemetry", () => {
        const { session, sockets } = makeSession();
        session.connect();
        sockets[0].open();
        sockets[0].receive('{"dir":"down","id":"01","payload":"010001f4ac","ts":"t"}');
        expect(session.wheelSpeeds.get(1)).toBe(500);
        expect(session.lastWheel).toEqual({ id: 1, rpm: 500 });
        session.close();
    });

    it("keeps raw hex in the log even when decoding fails", () => {
        const { session, sockets } = makeSession();
        session.connect();
        sockets[0].open();
        sockets[0].receive('{"dir":"down","id":"08","payload":"0102","ts":"t"}');
        expect(session.log[0].payloadHex).toBe("0102");
        expect(session.log[0].summary).toBe("2 B");
        session.close();
    });

    it("reconnects after a drop and preserves the log", async () => {
        vi.useFakeTimers();
        try {
            const { session, sockets } = makeSession();
            session.connect();
            sockets[0].open();
            sockets[0].receive('{"dir":"down","id":"01","payload":"0200ac","ts":"t"}');
            expect(session.log).toHaveLength(1);

            sockets[0].drop();
            expect(session.state).toBe("retrying");
            await vi.advanceTimersByTimeAsync(10);
            expect(sockets).toHaveLength(2);
            sockets[1].open();
            expect(session.state).toBe("connected");
            expect(session.log).toHaveLength(1); // log survived the drop
            session.close();
        } finally {
            vi.useRealTimers();
        }
    });

    it("backs off between failed attempts", async () => {
        vi.useFakeTimers();
        try {
            const { session, sockets } = makeSession();
            session.connect();
            sockets[0].drop(); // never opened
            await vi.advanceTimersByTimeAsync(5);
            sockets[1].drop();
            await vi.advanceTimersByTimeAsync(9);
            expect(sockets).toHaveLength(2); // second retry still pending (10 ms)
            await vi.advanceTimersByTimeAsync(1);
            expect(sockets).toHaveLength(3);
            session.close();
        } finally {
            vi.useRealTimers();
        }
    });

    it("close stops the retry loop", async () => {
        vi.useFakeTimers();
        try {
            const { session, sockets } = makeSession();
            session.connect();
            sockets[0].drop();
            session.close();
            await vi.advanceTimersByTimeAsync(100);
            expect(sockets).toHaveLength(1);
            expect(session.state).toBe("closed");
        } finally {
            vi.useRealTimers();
        }
    });

    it("refuses to send while disconnected", () => {
        const { session } = makeSession();
        expect(() => session.sendCommand(1, { kind: "requestTelemetry" })).toThrow();
    });
});
